// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

namespace worldtok {

using Bytes = std::vector<std::uint8_t>;

static_assert(std::endian::native == std::endian::little,
              "little-endian host assumed by the binary formats");

inline void
put_u32(Bytes &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
    }
}

inline void
put_f32(Bytes &out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void
put_f64(Bytes &out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffu));
    put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

inline void
put_bytes(Bytes &out, std::string_view s) {
    out.insert(out.end(), s.begin(), s.end());
}

/// Bounds-checked little-endian cursor; running off the end is a Truncated error.
class ByteReader {
  public:
    explicit ByteReader(std::span<const std::uint8_t> data) : mData(data) {}

    std::size_t remaining() const { return mData.size() - mPos; }
    std::size_t position() const { return mPos; }

    std::span<const std::uint8_t>
    take(std::size_t n) {
        require(n <= remaining(), ErrorKind::Truncated,
                "truncated payload: need " + std::to_string(n) + " bytes, have " +
                    std::to_string(remaining()));
        auto s = mData.subspan(mPos, n);
        mPos += n;
        return s;
    }

    std::uint32_t
    u32() {
        auto s = take(4);
        return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
               (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
    }

    float f32() { return std::bit_cast<float>(u32()); }

    double
    f64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return std::bit_cast<double>(lo | (hi << 32));
    }

  private:
    std::span<const std::uint8_t> mData;
    std::size_t mPos = 0;
};

inline Bytes
read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

inline void
write_file(const std::filesystem::path &path, std::span<const std::uint8_t> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char *>(data.data()), static_cast<std::streamsize>(data.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "short write to " + path.string());
}

inline void
write_text(const std::filesystem::path &path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

inline std::string
read_text(const std::filesystem::path &path) {
    auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

/// 64-bit FNV-1a, used to tag derived artifacts with their source file.
inline std::uint64_t
fnv1a64(std::span<const std::uint8_t> data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace worldtok

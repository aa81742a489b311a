// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// GSDW chunk container. Layout:
//
//   "GSDW"  u32 version  { char tag[4]  u32 length  u8 payload[length] }*
//
// All integers little-endian. Scenes, autoencoder checkpoints, projector
// checkpoints and token dumps are all stored as GSDW chunk sequences; the first
// chunk is always a "JSON" manifest.
#pragma once

#include "binary.hpp"
#include "error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace worldtok {

inline constexpr std::array<char, 4> kMagic = {'G', 'S', 'D', 'W'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct Chunk {
    std::string tag; // exactly four ASCII characters
    Bytes payload;
};

class Container {
  public:
    std::vector<Chunk> chunks;

    void
    add(std::string tag, Bytes payload) {
        require(tag.size() == 4, ErrorKind::InvalidArgument, "chunk tag must be 4 chars: " + tag);
        chunks.push_back({std::move(tag), std::move(payload)});
    }

    void
    add_json(const nlohmann::json &j) {
        const std::string text = j.dump();
        add("JSON", Bytes(text.begin(), text.end()));
    }

    const Chunk *
    find(std::string_view tag) const {
        auto it = std::find_if(chunks.begin(), chunks.end(),
                               [&](const Chunk &c) { return c.tag == tag; });
        return it == chunks.end() ? nullptr : &*it;
    }

    const Chunk &
    get(std::string_view tag) const {
        const Chunk *c = find(tag);
        require(c != nullptr, ErrorKind::SchemaViolation,
                "missing chunk '" + std::string(tag) + "'");
        return *c;
    }

    nlohmann::json
    manifest() const {
        const Chunk &c = get("JSON");
        try {
            return nlohmann::json::parse(c.payload.begin(), c.payload.end());
        } catch (const nlohmann::json::exception &e) {
            fail(ErrorKind::MalformedJson, std::string("manifest: ") + e.what());
        }
    }

    Bytes
    serialize() const {
        Bytes out;
        put_bytes(out, std::string_view(kMagic.data(), kMagic.size()));
        put_u32(out, kFormatVersion);
        for (const auto &c : chunks) {
            put_bytes(out, c.tag);
            put_u32(out, static_cast<std::uint32_t>(c.payload.size()));
            out.insert(out.end(), c.payload.begin(), c.payload.end());
        }
        return out;
    }

    static Container
    parse(std::span<const std::uint8_t> data) {
        require(data.size() >= 4 && std::equal(kMagic.begin(), kMagic.end(), data.begin()),
                ErrorKind::BadMagic, "bad magic: not a GSDW file");
        ByteReader r(data.subspan(4));
        const std::uint32_t version = r.u32();
        require(version == kFormatVersion, ErrorKind::UnsupportedVersion,
                "unsupported GSDW version " + std::to_string(version));
        Container c;
        while (r.remaining() > 0) {
            auto tag = r.take(4);
            const std::uint32_t len = r.u32();
            auto payload = r.take(len);
            c.chunks.push_back(
                {std::string(tag.begin(), tag.end()), Bytes(payload.begin(), payload.end())});
        }
        return c;
    }

    void save(const std::filesystem::path &path) const { write_file(path, serialize()); }

    static Container load(const std::filesystem::path &path) { return parse(read_file(path)); }
};

} // namespace worldtok

// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "binary.hpp"
#include "error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace worldtok {

/// Dense H x W x C row-major grid of doubles. Images, feature maps, latent
/// tensors and condition maps all share this layout.
class Grid {
  public:
    Grid() = default;
    Grid(int height, int width, int channels, double fill = 0.0)
        : mHeight(height), mWidth(width), mChannels(channels),
          mData(static_cast<std::size_t>(height) * width * channels, fill) {
        require(height >= 0 && width >= 0 && channels >= 0, ErrorKind::InvalidArgument,
                "grid dimensions must be non-negative");
    }

    int height() const { return mHeight; }
    int width() const { return mWidth; }
    int channels() const { return mChannels; }
    std::size_t size() const { return mData.size(); }
    std::size_t pixels() const { return static_cast<std::size_t>(mHeight) * mWidth; }

    double &
    at(int y, int x, int c = 0) {
        return mData[(static_cast<std::size_t>(y) * mWidth + x) * mChannels + c];
    }
    double
    at(int y, int x, int c = 0) const {
        return mData[(static_cast<std::size_t>(y) * mWidth + x) * mChannels + c];
    }

    double *pixel(int y, int x) { return &mData[(static_cast<std::size_t>(y) * mWidth + x) * mChannels]; }
    const double *
    pixel(int y, int x) const {
        return &mData[(static_cast<std::size_t>(y) * mWidth + x) * mChannels];
    }

    std::vector<double> &data() { return mData; }
    const std::vector<double> &data() const { return mData; }

    bool
    same_shape(const Grid &o) const {
        return mHeight == o.mHeight && mWidth == o.mWidth && mChannels == o.mChannels;
    }

    bool
    all_finite() const {
        for (double v : mData) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool operator==(const Grid &) const = default;

  private:
    int mHeight = 0;
    int mWidth = 0;
    int mChannels = 0;
    std::vector<double> mData;
};

inline void
require_same_shape(const Grid &a, const Grid &b, const std::string &what) {
    require(a.same_shape(b), ErrorKind::DimensionMismatch,
            what + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                std::to_string(b.channels()) + ")");
}

inline double
max_abs_diff(const Grid &a, const Grid &b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

// Raw map format: <stem>.f32 holds little-endian float32 values in H x W x C
// row-major order; <stem>.json is the header describing them.

inline nlohmann::json
raw_header(const Grid &g, const std::string &payload_name) {
    return {{"format", "worldtok-raw"}, {"version", 1},       {"dtype", "float32"},
            {"byte_order", "little"},   {"height", g.height()}, {"width", g.width()},
            {"channels", g.channels()}, {"payload", payload_name}};
}

inline void
write_raw_map(const Grid &g, const std::filesystem::path &stem) {
    auto payload = stem;
    payload += ".f32";
    auto header = stem;
    header += ".json";
    Bytes out;
    out.reserve(g.size() * 4);
    for (double v : g.data()) put_f32(out, static_cast<float>(v));
    write_file(payload, out);
    write_text(header, raw_header(g, payload.filename().string()).dump(2) + "\n");
}

/// Reads a raw map given either its header path (.json) or the shared stem.
inline Grid
read_raw_map(std::filesystem::path path) {
    if (path.extension() != ".json") path += ".json";
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::MalformedJson, path.string() + ": " + e.what());
    }
    require(h.value("format", "") == "worldtok-raw" && h.value("dtype", "") == "float32",
            ErrorKind::SchemaViolation, path.string() + ": not a float32 worldtok raw header");
    const int height = h.at("height").get<int>();
    const int width = h.at("width").get<int>();
    const int channels = h.at("channels").get<int>();
    const auto payload = path.parent_path() / h.at("payload").get<std::string>();
    const Bytes bytes = read_file(payload);
    Grid g(height, width, channels);
    require(bytes.size() == g.size() * 4, ErrorKind::Truncated,
            payload.string() + ": expected " + std::to_string(g.size() * 4) + " bytes");
    ByteReader r(bytes);
    for (double &v : g.data()) v = r.f32();
    return g;
}

} // namespace worldtok

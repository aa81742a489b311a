// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// 8-bit PNG previews through libpng. These are for eyeballing only; the raw
// float maps are the data of record.
#pragma once

#include "error.hpp"
#include "grid.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

namespace worldtok {

namespace detail {

// Only trivially destructible locals live here because libpng reports errors
// by longjmp.
inline bool
png_encode(std::FILE *fp, int width, int height, int channels, const png_byte *pixels) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y) png_write_row(png, pixels + y * stride);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

} // namespace detail

/// Writes a 1- or 3-channel grid, mapping [0, 1] to [0, 255] with clamping.
inline void
write_png(const Grid &g, const std::filesystem::path &path) {
    require(g.channels() == 1 || g.channels() == 3, ErrorKind::InvalidArgument, "write_png: need 1 or 3 channels");
    require(g.height() > 0 && g.width() > 0, ErrorKind::InvalidArgument, "write_png: empty image");
    std::vector<png_byte> pixels(g.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double v = g.data()[i];
        pixels[i] = static_cast<png_byte>(std::lround((std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0) * 255.0));
    }
    std::unique_ptr<std::FILE, int (*)(std::FILE *)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    require(fp != nullptr, ErrorKind::Io, "cannot open " + path.string() + " for writing");
    require(detail::png_encode(fp.get(), g.width(), g.height(), g.channels(), pixels.data()), ErrorKind::Io,
            "libpng failed writing " + path.string());
}

/// Rescales channel `c` by 1 / max so the preview spans the full range.
inline Grid
normalized_channel(const Grid &g, int c = 0) {
    Grid out(g.height(), g.width(), 1);
    double hi = 0.0;
    for (int y = 0; y < g.height(); ++y) {
        for (int x = 0; x < g.width(); ++x) hi = std::max(hi, g.at(y, x, c));
    }
    if (hi <= 0.0) return out;
    for (int y = 0; y < g.height(); ++y) {
        for (int x = 0; x < g.width(); ++x) out.at(y, x) = g.at(y, x, c) / hi;
    }
    return out;
}

} // namespace worldtok

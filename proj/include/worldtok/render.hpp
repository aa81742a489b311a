// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Tile-based forward rasterizer for color, depth and language channels.
//
// Each Gaussian is projected with the EWA approximation, sorted globally by
// camera-space depth (ties broken by storage index), binned to the tiles its
// 3-sigma ellipse overlaps, and composited front to back per pixel:
//
//   w_i(v) = alpha_i(v) * prod_{j<i} (1 - alpha_j(v))
//   F(v)   = sum_i w_i(v) f_i        (same weights for color and depth)
//
// with alpha_i(v) = sigmoid(opacity_logit_i) * exp(-0.5 d^T cov2d^-1 d),
// clamped to [0, 0.99] and zero outside the 3-sigma ellipse.
#pragma once

#include "grid.hpp"
#include "scene.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <thread>
#include <vector>

namespace worldtok {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCov2dRegularizer = 0.3;
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kCutoffSigma = 3.0;
inline constexpr double kMinCovDet = 1e-12;

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    int source_index = -1;
};

namespace detail {

inline std::optional<Splat2D>
project_with(const GaussianPrimitive &prim, const CameraModel &cam, const Pose &camera_from_world,
             int source_index) {
    const Vec3 pc = camera_from_world.apply(prim.position);
    if (!(pc.z() > kNearPlane)) return std::nullopt;
    const double z = pc.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / z, 0.0, -cam.fx * pc.x() / (z * z),
        0.0, cam.fy / z, -cam.fy * pc.y() / (z * z);
    const Mat3 w = camera_from_world.rotation.matrix();
    const Mat3 sigma = covariance_from_scale_rotation(prim.log_scale, prim.rotation);
    Splat2D s;
    s.mean2d = {cam.fx * pc.x() / z + cam.cx, cam.fy * pc.y() / z + cam.cy};
    s.cov2d = jac * w * sigma * w.transpose() * jac.transpose();
    s.cov2d(0, 1) = s.cov2d(1, 0) = 0.5 * (s.cov2d(0, 1) + s.cov2d(1, 0));
    s.cov2d += kCov2dRegularizer * Mat2::Identity();
    s.depth = z;
    s.source_index = source_index;
    const double ex = kCutoffSigma * std::sqrt(s.cov2d(0, 0));
    const double ey = kCutoffSigma * std::sqrt(s.cov2d(1, 1));
    if (s.mean2d.x() + ex < 0.0 || s.mean2d.x() - ex > cam.width - 1 ||
        s.mean2d.y() + ey < 0.0 || s.mean2d.y() - ey > cam.height - 1) {
        return std::nullopt;
    }
    return s;
}

} // namespace detail

/// EWA projection of one primitive. Absent when the center is at or in front
/// of the near plane, or the 3-sigma footprint misses every pixel center.
inline std::optional<Splat2D>
project_gaussian(const GaussianPrimitive &prim, const CameraModel &cam, int source_index = 0) {
    cam.validate();
    return detail::project_with(prim, cam, cam.world_from_camera.inverse(), source_index);
}

struct RenderOptions {
    int tile_size = 16;
    int threads = 1;
};

struct RenderDiagnostics {
    std::size_t projected = 0;
    std::size_t culled = 0;
    std::size_t degenerate = 0;
};

struct RenderOutput {
    Grid color;      // H x W x 3
    Grid lang;       // H x W x latent_width
    Grid depth;      // H x W x 1, camera-frame z
    Grid weight_sum; // H x W x 1
    RenderDiagnostics diagnostics;
};

struct PixelWeight {
    int source_index;
    double weight;
    bool operator==(const PixelWeight &) const = default;
};

/// Per-pixel compositing weights, row-major over pixels, in depth order.
struct WeightMap {
    int height = 0;
    int width = 0;
    std::vector<std::vector<PixelWeight>> pixels;

    const std::vector<PixelWeight> &at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// A projected splat ready for per-pixel evaluation.
struct PreparedSplat {
    Splat2D splat;
    Mat2 conic; // cov2d^-1
    double opacity;
    int px_lo, px_hi, py_lo, py_hi; // inclusive pixel range of the 3-sigma box
};

/// alpha of a prepared splat at pixel center (px, py); 0 outside the cutoff.
inline double
splat_alpha(const PreparedSplat &p, double px, double py) {
    const Vec2 d(px - p.splat.mean2d.x(), py - p.splat.mean2d.y());
    const double m = d.dot(p.conic * d);
    if (m > kCutoffSigma * kCutoffSigma) return 0.0;
    return std::clamp(p.opacity * std::exp(-0.5 * m), 0.0, kAlphaMax);
}

/// Splats of a scene as seen from one camera, in compositing order.
struct PreparedView {
    int width = 0;
    int height = 0;
    std::vector<PreparedSplat> splats;
    RenderDiagnostics diagnostics;
};

inline PreparedView
prepare_view(const GaussianScene &scene, const CameraModel &cam) {
    cam.validate();
    PreparedView view;
    view.width = cam.width;
    view.height = cam.height;
    const Pose cfw = cam.world_from_camera.inverse();
    const auto &prims = scene.primitives();
    for (std::size_t i = 0; i < prims.size(); ++i) {
        auto s = detail::project_with(prims[i], cam, cfw, static_cast<int>(i));
        if (!s) {
            ++view.diagnostics.culled;
            continue;
        }
        const double det = s->cov2d.determinant();
        if (!(det >= kMinCovDet) || !std::isfinite(det)) {
            ++view.diagnostics.degenerate;
            continue;
        }
        PreparedSplat p;
        p.splat = *s;
        p.conic = s->cov2d.inverse();
        p.opacity = prims[i].opacity();
        const double ex = kCutoffSigma * std::sqrt(s->cov2d(0, 0));
        const double ey = kCutoffSigma * std::sqrt(s->cov2d(1, 1));
        p.px_lo = std::max(0, static_cast<int>(std::ceil(s->mean2d.x() - ex)));
        p.px_hi = std::min(cam.width - 1, static_cast<int>(std::floor(s->mean2d.x() + ex)));
        p.py_lo = std::max(0, static_cast<int>(std::ceil(s->mean2d.y() - ey)));
        p.py_hi = std::min(cam.height - 1, static_cast<int>(std::floor(s->mean2d.y() + ey)));
        if (p.px_lo > p.px_hi || p.py_lo > p.py_hi) {
            ++view.diagnostics.culled;
            continue;
        }
        view.splats.push_back(p);
        ++view.diagnostics.projected;
    }
    std::sort(view.splats.begin(), view.splats.end(), [](const PreparedSplat &a, const PreparedSplat &b) {
        if (a.splat.depth != b.splat.depth) return a.splat.depth < b.splat.depth;
        return a.splat.source_index < b.splat.source_index;
    });
    return view;
}

/// Runs front-to-back compositing over every pixel, tile by tile. For each
/// pixel `visit(x, y, contributions)` is called once with the nonzero
/// (prepared splat, alpha, weight) triples in depth order. Tiles are handed to
/// worker threads; each pixel is visited by exactly one thread.
struct Contribution {
    const PreparedSplat *splat;
    double alpha;
    double weight;
};

template <typename Visit>
void
composite_tiles(const PreparedView &view, const RenderOptions &opts, Visit &&visit) {
    require(opts.tile_size == 8 || opts.tile_size == 16 || opts.tile_size == 32,
            ErrorKind::InvalidArgument, "tile_size must be 8, 16 or 32");
    require(opts.threads >= 1, ErrorKind::InvalidArgument, "threads must be >= 1");
    const int ts = opts.tile_size;
    const int tiles_x = (view.width + ts - 1) / ts;
    const int tiles_y = (view.height + ts - 1) / ts;
    // Appending in compositing order keeps every tile list depth-sorted.
    std::vector<std::vector<const PreparedSplat *>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (const auto &s : view.splats) {
        for (int ty = s.py_lo / ts; ty <= s.py_hi / ts; ++ty) {
            for (int tx = s.px_lo / ts; tx <= s.px_hi / ts; ++tx) {
                bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(&s);
            }
        }
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        std::vector<Contribution> contrib;
        for (std::size_t t = next++; t < bins.size(); t = next++) {
            const int tx = static_cast<int>(t % tiles_x);
            const int ty = static_cast<int>(t / tiles_x);
            const auto &bin = bins[t];
            for (int y = ty * ts; y < std::min(view.height, (ty + 1) * ts); ++y) {
                for (int x = tx * ts; x < std::min(view.width, (tx + 1) * ts); ++x) {
                    contrib.clear();
                    double transmittance = 1.0;
                    for (const PreparedSplat *s : bin) {
                        if (x < s->px_lo || x > s->px_hi || y < s->py_lo || y > s->py_hi) continue;
                        const double a = splat_alpha(*s, x, y);
                        if (a <= 0.0) continue;
                        contrib.push_back({s, a, a * transmittance});
                        transmittance *= 1.0 - a;
                    }
                    visit(x, y, contrib);
                }
            }
        }
    };
    if (opts.threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < opts.threads; ++i) pool.emplace_back(worker);
    }
}

inline RenderOutput
render(const GaussianScene &scene, const CameraModel &cam, const RenderOptions &opts = {}) {
    const PreparedView view = prepare_view(scene, cam);
    const int lw = scene.latent_width();
    RenderOutput out{Grid(cam.height, cam.width, 3), Grid(cam.height, cam.width, lw),
                     Grid(cam.height, cam.width, 1), Grid(cam.height, cam.width, 1), view.diagnostics};
    const auto &prims = scene.primitives();
    composite_tiles(view, opts, [&](int x, int y, const std::vector<Contribution> &contrib) {
        double *color = out.color.pixel(y, x);
        double *lang = out.lang.pixel(y, x);
        double depth = 0.0, wsum = 0.0;
        for (const auto &c : contrib) {
            const auto &p = prims[c.splat->splat.source_index];
            for (int k = 0; k < 3; ++k) color[k] += c.weight * p.color[k];
            for (int k = 0; k < lw; ++k) lang[k] += c.weight * p.lang_latent[k];
            depth += c.weight * c.splat->splat.depth;
            wsum += c.weight;
        }
        out.depth.at(y, x) = depth;
        out.weight_sum.at(y, x) = wsum;
    });
    return out;
}

inline WeightMap
render_weights(const PreparedView &view, const RenderOptions &opts = {}) {
    WeightMap wm{view.height, view.width, {}};
    wm.pixels.resize(static_cast<std::size_t>(view.height) * view.width);
    composite_tiles(view, opts, [&](int x, int y, const std::vector<Contribution> &contrib) {
        auto &px = wm.pixels[static_cast<std::size_t>(y) * view.width + x];
        px.reserve(contrib.size());
        for (const auto &c : contrib) px.push_back({c.splat->splat.source_index, c.weight});
    });
    return wm;
}

inline WeightMap
render_weights(const GaussianScene &scene, const CameraModel &cam, const RenderOptions &opts = {}) {
    return render_weights(prepare_view(scene, cam), opts);
}

inline constexpr double kPsnrCap = 99.0;

/// PSNR in dB for unit-range images; identical images report the 99 dB cap.
inline double
psnr(const Grid &a, const Grid &b) {
    require_same_shape(a, b, "psnr");
    require(a.size() > 0, ErrorKind::InvalidArgument, "psnr of empty images");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(a.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

} // namespace worldtok

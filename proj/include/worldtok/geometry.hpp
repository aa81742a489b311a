// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Sparse image/depth conditions: a colored point cloud rigidly moved into a
// target camera and splatted one point per pixel with a z-buffer.
#pragma once

#include "grid.hpp"
#include "parallel.hpp"
#include "png.hpp"
#include "render.hpp"
#include "scene.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace worldtok {

struct ColoredPoint {
    Vec3 position = Vec3::Zero();
    Vec3 color = Vec3::Zero();
};

struct ColoredPointCloud {
    std::vector<ColoredPoint> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    void
    validate() const {
        for (const auto &p : points) {
            require(p.position.allFinite() && p.color.allFinite(), ErrorKind::InvalidArgument,
                    "point cloud contains non-finite values");
        }
    }
};

inline ColoredPointCloud
transform_points(const ColoredPointCloud &cloud, const Pose &pose) {
    ColoredPointCloud out;
    out.points.reserve(cloud.size());
    const Mat3 r = pose.rotation.matrix();
    for (const auto &p : cloud.points) out.points.push_back({r * p.position + pose.translation, p.color});
    return out;
}

/// Invalid pixels hold exactly 0 in rgb, depth and mask. Stored values are
/// rounded to float32 so a map survives its raw serialization unchanged.
struct SparseConditionMap {
    Grid rgb;
    Grid depth;
    Grid mask;

    SparseConditionMap() = default;
    SparseConditionMap(int height, int width) : rgb(height, width, 3), depth(height, width, 1), mask(height, width, 1) {}

    int height() const { return depth.height(); }
    int width() const { return depth.width(); }
    bool valid(int y, int x) const { return mask.at(y, x) != 0.0; }

    std::size_t
    valid_count() const {
        std::size_t n = 0;
        for (double v : mask.data()) n += v != 0.0;
        return n;
    }

    bool operator==(const SparseConditionMap &) const = default;
};

inline double
round_f32(double v) {
    return static_cast<double>(static_cast<float>(v));
}

namespace detail {

struct ZCell {
    double z = std::numeric_limits<double>::infinity();
    std::size_t index = std::numeric_limits<std::size_t>::max();

    bool closer_than(const ZCell &o) const { return z < o.z || (z == o.z && index < o.index); }
};

} // namespace detail

/// Pinhole projection into `cam`; pixel (floor(u + 0.5), floor(v + 0.5)).
/// The nearest point wins each pixel (ties: lower index); points closer than
/// the near plane are dropped. Threads split the cloud and merge z-buffers.
inline SparseConditionMap
project_points_zbuffer(const ColoredPointCloud &cloud, const CameraModel &cam, int threads = 1) {
    cam.validate();
    cloud.validate();
    require(threads >= 1, ErrorKind::InvalidArgument, "threads must be >= 1");
    const Pose cam_from_world = cam.world_from_camera.inverse();
    const Mat3 r = cam_from_world.rotation.matrix();
    const std::size_t pixels = static_cast<std::size_t>(cam.width) * cam.height;
    const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(threads), std::max<std::size_t>(1, cloud.size()));
    std::vector<std::vector<detail::ZCell>> buffers(chunks, std::vector<detail::ZCell>(pixels));
    parallel_for(chunks, threads, [&](std::size_t c) {
        auto &buf = buffers[c];
        const std::size_t lo = cloud.size() * c / chunks, hi = cloud.size() * (c + 1) / chunks;
        for (std::size_t i = lo; i < hi; ++i) {
            const Vec3 p = r * cloud.points[i].position + cam_from_world.translation;
            if (!(p.z() >= kNearPlane)) continue;
            const double u = cam.fx * p.x() / p.z() + cam.cx;
            const double v = cam.fy * p.y() / p.z() + cam.cy;
            const double px = std::floor(u + 0.5), py = std::floor(v + 0.5);
            if (!(px >= 0.0 && px < cam.width && py >= 0.0 && py < cam.height)) continue;
            const detail::ZCell cell{p.z(), i};
            auto &slot = buf[static_cast<std::size_t>(py) * cam.width + static_cast<std::size_t>(px)];
            if (cell.closer_than(slot)) slot = cell;
        }
    });
    SparseConditionMap out(cam.height, cam.width);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const std::size_t k = static_cast<std::size_t>(y) * cam.width + x;
            detail::ZCell best;
            for (const auto &b : buffers) {
                if (b[k].closer_than(best)) best = b[k];
            }
            if (best.index == std::numeric_limits<std::size_t>::max()) continue;
            const Vec3 &col = cloud.points[best.index].color;
            for (int ch = 0; ch < 3; ++ch) out.rgb.at(y, x, ch) = round_f32(col[ch]);
            out.depth.at(y, x) = round_f32(best.z);
            out.mask.at(y, x) = 1.0;
        }
    }
    return out;
}

/// Camera moved by `shift_m` along its own +x (right) axis.
inline CameraModel
shifted_camera(const CameraModel &cam, double shift_m) {
    require(std::isfinite(shift_m), ErrorKind::InvalidArgument, "lateral shift must be finite");
    CameraModel out = cam;
    out.world_from_camera.translation += cam.world_from_camera.rotation.rotate(Vec3(shift_m, 0.0, 0.0));
    return out;
}

/// Camera re-posed by ego motion: world_from_camera' = future_pose * world_from_camera.
inline CameraModel
future_camera(const CameraModel &cam, const Pose &future_pose) {
    CameraModel out = cam;
    out.world_from_camera = future_pose * cam.world_from_camera;
    return out;
}

inline SparseConditionMap
build_spatial_condition(const ColoredPointCloud &cloud, const CameraModel &base, double shift_m, int threads = 1) {
    return project_points_zbuffer(cloud, shifted_camera(base, shift_m), threads);
}

inline SparseConditionMap
build_temporal_condition(const ColoredPointCloud &cloud, const CameraModel &base, const Pose &future_pose,
                         int threads = 1) {
    return project_points_zbuffer(cloud, future_camera(base, future_pose), threads);
}

/// Lifts each valid pixel center back to a world point at its stored depth.
inline ColoredPointCloud
unproject_depth(const SparseConditionMap &map, const CameraModel &cam) {
    cam.validate();
    require(map.height() == cam.height && map.width() == cam.width, ErrorKind::DimensionMismatch,
            "unproject: map resolution differs from camera");
    ColoredPointCloud out;
    for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) {
            if (!map.valid(y, x)) continue;
            const double z = map.depth.at(y, x);
            const Vec3 pc((x - cam.cx) * z / cam.fx, (y - cam.cy) * z / cam.fy, z);
            out.points.push_back({cam.world_from_camera.apply(pc),
                                  Vec3(map.rgb.at(y, x, 0), map.rgb.at(y, x, 1), map.rgb.at(y, x, 2))});
        }
    }
    return out;
}

enum class ConditionPreset { Low, High };

/// 224 x 400 or 424 x 800 camera with the principal point at the center and
/// the given horizontal field of view.
inline CameraModel
preset_camera(ConditionPreset preset, double hfov_deg = 70.0, Pose world_from_camera = {}) {
    require(hfov_deg > 0.0 && hfov_deg < 180.0, ErrorKind::InvalidArgument, "field of view must be in (0, 180)");
    CameraModel cam;
    cam.width = preset == ConditionPreset::Low ? 400 : 800;
    cam.height = preset == ConditionPreset::Low ? 224 : 424;
    cam.fx = cam.fy = 0.5 * cam.width / std::tan(0.5 * hfov_deg * std::numbers::pi / 180.0);
    cam.cx = 0.5 * cam.width;
    cam.cy = 0.5 * cam.height;
    cam.world_from_camera = world_from_camera;
    return cam;
}

// Files: <stem>_rgb, <stem>_depth and <stem>_mask raw maps, plus PNG previews
// (<stem>_rgb.png, <stem>_depth.png) with invalid pixels black.

inline void
save_condition_map(const SparseConditionMap &map, const std::filesystem::path &stem, bool previews = true) {
    auto with = [&](const char *suffix) {
        auto p = stem;
        p += suffix;
        return p;
    };
    write_raw_map(map.rgb, with("_rgb"));
    write_raw_map(map.depth, with("_depth"));
    write_raw_map(map.mask, with("_mask"));
    if (previews) {
        write_png(map.rgb, with("_rgb.png"));
        write_png(normalized_channel(map.depth), with("_depth.png"));
    }
}

inline SparseConditionMap
load_condition_map(const std::filesystem::path &stem) {
    auto with = [&](const char *suffix) {
        auto p = stem;
        p += suffix;
        return p;
    };
    SparseConditionMap m;
    m.rgb = read_raw_map(with("_rgb"));
    m.depth = read_raw_map(with("_depth"));
    m.mask = read_raw_map(with("_mask"));
    require(m.rgb.channels() == 3 && m.depth.channels() == 1 && m.mask.channels() == 1 &&
                m.rgb.height() == m.depth.height() && m.rgb.width() == m.depth.width() && m.mask.same_shape(m.depth),
            ErrorKind::SchemaViolation, stem.string() + ": inconsistent condition map channels");
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m.valid(y, x)) {
                require(m.depth.at(y, x) > 0.0, ErrorKind::SchemaViolation, stem.string() + ": non-positive depth");
            }
        }
    }
    return m;
}

// Point cloud text format: one point per line, "x y z r g b".

inline ColoredPointCloud
parse_point_cloud(const std::string &text, const std::string &origin = "point cloud") {
    ColoredPointCloud cloud;
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        double v[6];
        char extra = 0;
        const int n = std::sscanf(line.c_str(), "%lf %lf %lf %lf %lf %lf %c", &v[0], &v[1], &v[2], &v[3], &v[4],
                                  &v[5], &extra);
        require(n == 6, ErrorKind::MalformedText,
                origin + ":" + std::to_string(line_no) + ": expected 'x y z r g b'");
        cloud.points.push_back({Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
    }
    cloud.validate();
    return cloud;
}

inline std::string
format_point_cloud(const ColoredPointCloud &cloud) {
    std::string out;
    char buf[256];
    for (const auto &p : cloud.points) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g\n", p.position.x(), p.position.y(),
                      p.position.z(), p.color.x(), p.color.y(), p.color.z());
        out += buf;
    }
    return out;
}

} // namespace worldtok

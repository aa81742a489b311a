// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "error.hpp"

#include <Eigen/Core>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace worldtok {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline bool
all_finite(const Vec3 &v) {
    return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

inline bool
all_finite(const VecX &v) {
    return v.allFinite();
}

/// Rotation quaternion with qw-last component order. Construction normalizes
/// any input whose norm is not already within 1e-6 of one; inputs with norm
/// outside [0.5, 2] or non-finite components are rejected.
class UnitQuaternion {
  public:
    UnitQuaternion() = default;

    UnitQuaternion(double qx, double qy, double qz, double qw) : mX(qx), mY(qy), mZ(qz), mW(qw) {
        require(std::isfinite(qx) && std::isfinite(qy) && std::isfinite(qz) && std::isfinite(qw),
                ErrorKind::InvariantViolation, "quaternion has non-finite components");
        const double n = std::sqrt(qx * qx + qy * qy + qz * qz + qw * qw);
        require(n >= 0.5 && n <= 2.0, ErrorKind::InvariantViolation,
                "quaternion norm " + std::to_string(n) + " outside [0.5, 2]");
        if (std::abs(n - 1.0) > 1e-6) {
            mX /= n;
            mY /= n;
            mZ /= n;
            mW /= n;
        }
    }

    static UnitQuaternion identity() { return {}; }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    static UnitQuaternion
    from_axis_angle(const Vec3 &axis, double angle) {
        const Vec3 a = axis.normalized();
        const double s = std::sin(angle / 2.0);
        return {a.x() * s, a.y() * s, a.z() * s, std::cos(angle / 2.0)};
    }

    double x() const { return mX; }
    double y() const { return mY; }
    double z() const { return mZ; }
    double w() const { return mW; }

    double norm() const { return std::sqrt(mX * mX + mY * mY + mZ * mZ + mW * mW); }

    Mat3
    matrix() const {
        const double x = mX, y = mY, z = mZ, w = mW;
        Mat3 r;
        r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return r;
    }

    UnitQuaternion conjugate() const { return {-mX, -mY, -mZ, mW}; }

    /// Hamilton product: (a * b) rotates by b first, then a.
    friend UnitQuaternion
    operator*(const UnitQuaternion &a, const UnitQuaternion &b) {
        return {a.mW * b.mX + a.mX * b.mW + a.mY * b.mZ - a.mZ * b.mY,
                a.mW * b.mY - a.mX * b.mZ + a.mY * b.mW + a.mZ * b.mX,
                a.mW * b.mZ + a.mX * b.mY - a.mY * b.mX + a.mZ * b.mW,
                a.mW * b.mW - a.mX * b.mX - a.mY * b.mY - a.mZ * b.mZ};
    }

    Vec3 rotate(const Vec3 &v) const { return matrix() * v; }

    bool operator==(const UnitQuaternion &) const = default;

  private:
    double mX = 0.0, mY = 0.0, mZ = 0.0, mW = 1.0;
};

/// Rigid transform p' = R p + t. Used for camera extrinsics and trajectory poses.
struct Pose {
    Vec3 translation = Vec3::Zero();
    UnitQuaternion rotation;

    static Pose identity() { return {}; }

    Vec3 apply(const Vec3 &p) const { return rotation.rotate(p) + translation; }

    Pose
    inverse() const {
        const UnitQuaternion inv = rotation.conjugate();
        return {-inv.rotate(translation), inv};
    }

    /// (a * b).apply(p) == a.apply(b.apply(p))
    friend Pose
    operator*(const Pose &a, const Pose &b) {
        return {a.rotation.rotate(b.translation) + a.translation, a.rotation * b.rotation};
    }
};

struct Aabb {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();

    bool
    contains(const Vec3 &p, double margin) const {
        return (p.array() >= lo.array() - margin).all() && (p.array() <= hi.array() + margin).all();
    }
};

struct GaussianPrimitive {
    Vec3 position = Vec3::Zero();
    double opacity_logit = 0.0;        // pre-sigmoid
    Vec3 log_scale = Vec3::Zero();     // scale = exp(log_scale)
    UnitQuaternion rotation;
    Vec3 color = Vec3::Zero();         // linear RGB in [0, 1]
    VecX lang_latent = VecX::Zero(3);  // lang_levels blocks of lang_dim

    double opacity() const { return sigmoid(opacity_logit); }
    Vec3 scale() const { return log_scale.array().exp().matrix(); }
};

/// Sigma = R diag(exp(s))^2 R^T.
inline Mat3
covariance_from_scale_rotation(const Vec3 &log_scale, const UnitQuaternion &rotation) {
    require(all_finite(log_scale), ErrorKind::InvalidArgument, "non-finite log-scale");
    const Mat3 r = rotation.matrix();
    const Vec3 s2 = (2.0 * log_scale.array()).exp().matrix();
    return r * s2.asDiagonal() * r.transpose();
}

inline void
validate_primitive(const GaussianPrimitive &p, int latent_width) {
    require(all_finite(p.position) && std::isfinite(p.opacity_logit) && all_finite(p.log_scale) &&
                all_finite(p.color) && all_finite(p.lang_latent),
            ErrorKind::InvariantViolation, "primitive has non-finite fields");
    require((p.color.array() >= 0.0).all() && (p.color.array() <= 1.0).all(),
            ErrorKind::InvariantViolation, "primitive color outside [0, 1]");
    require(p.lang_latent.size() == latent_width, ErrorKind::DimensionMismatch,
            "lang_latent width " + std::to_string(p.lang_latent.size()) + " != " +
                std::to_string(latent_width));
    const double o = p.opacity();
    require(o > 0.0 && o < 1.0, ErrorKind::InvariantViolation, "sigmoid(opacity_logit) saturated");
    require((p.scale().array() > 0.0).all() && p.scale().allFinite(), ErrorKind::InvariantViolation,
            "non-positive scale");
}

/// An immutable, validated set of language-embedded Gaussians.
///
/// `lang_levels` is 1 for a single feature level, or 3 when the scene carries
/// independent subpart/part/whole latent blocks; each primitive's latent is
/// then `lang_levels * lang_dim` wide.
class GaussianScene {
  public:
    GaussianScene(std::string scene_id, std::vector<GaussianPrimitive> primitives,
                  int lang_dim = 3, int lang_levels = 1, std::optional<Aabb> bounds = std::nullopt)
        : mSceneId(std::move(scene_id)), mPrimitives(std::move(primitives)), mLangDim(lang_dim),
          mLangLevels(lang_levels) {
        require(!mPrimitives.empty(), ErrorKind::InvariantViolation,
                "scene must contain at least one primitive");
        require(mLangDim >= 1, ErrorKind::InvariantViolation, "lang_dim must be >= 1");
        require(mLangLevels == 1 || mLangLevels == 3, ErrorKind::InvariantViolation,
                "lang_levels must be 1 or 3");
        for (const auto &p : mPrimitives) validate_primitive(p, latent_width());
        mBounds = bounds ? *bounds : tight_bounds();
        require(all_finite(mBounds.lo) && all_finite(mBounds.hi) &&
                    (mBounds.lo.array() <= mBounds.hi.array()).all(),
                ErrorKind::InvariantViolation, "invalid scene bounds");
        const double margin = 3.0 * max_scale();
        for (const auto &p : mPrimitives) {
            require(mBounds.contains(p.position, margin), ErrorKind::InvariantViolation,
                    "primitive outside scene bounds");
        }
    }

    const std::string &scene_id() const { return mSceneId; }
    const std::vector<GaussianPrimitive> &primitives() const { return mPrimitives; }
    std::size_t size() const { return mPrimitives.size(); }
    int lang_dim() const { return mLangDim; }
    int lang_levels() const { return mLangLevels; }
    int latent_width() const { return mLangDim * mLangLevels; }
    const Aabb &bounds() const { return mBounds; }

    double
    max_scale() const {
        double m = 0.0;
        for (const auto &p : mPrimitives) m = std::max(m, p.scale().maxCoeff());
        return m;
    }

    /// Same geometry, new latents; used by language-field fitting.
    GaussianScene
    with_latents(const std::vector<VecX> &latents) const {
        require(latents.size() == mPrimitives.size(), ErrorKind::DimensionMismatch,
                "latent count mismatch");
        auto prims = mPrimitives;
        for (std::size_t i = 0; i < prims.size(); ++i) prims[i].lang_latent = latents[i];
        return GaussianScene(mSceneId, std::move(prims), mLangDim, mLangLevels, mBounds);
    }

    GaussianScene
    with_primitives(std::vector<GaussianPrimitive> prims) const {
        return GaussianScene(mSceneId, std::move(prims), mLangDim, mLangLevels, mBounds);
    }

  private:
    Aabb
    tight_bounds() const {
        Aabb b{mPrimitives.front().position, mPrimitives.front().position};
        for (const auto &p : mPrimitives) {
            b.lo = b.lo.cwiseMin(p.position);
            b.hi = b.hi.cwiseMax(p.position);
        }
        return b;
    }

    std::string mSceneId;
    std::vector<GaussianPrimitive> mPrimitives;
    int mLangDim;
    int mLangLevels;
    Aabb mBounds;
};

/// Pinhole camera. Pixel centers sit at integer coordinates.
struct CameraModel {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 1, height = 1;
    Pose world_from_camera;

    void
    validate() const {
        require(std::isfinite(fx) && std::isfinite(fy) && fx > 0.0 && fy > 0.0,
                ErrorKind::InvariantViolation, "camera focal lengths must be positive");
        require(width > 0 && height > 0, ErrorKind::InvariantViolation,
                "camera resolution must be positive");
        require(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height, ErrorKind::InvariantViolation,
                "principal point outside image");
    }

    Vec3 to_camera(const Vec3 &world) const { return world_from_camera.inverse().apply(world); }
};

} // namespace worldtok

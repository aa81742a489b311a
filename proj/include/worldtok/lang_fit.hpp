// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Fitting per-Gaussian language latents against target feature maps with the
// geometry frozen. The rendered feature is linear in the latents,
// F(v) = sum_i w_i(v) f_i, so dL/df_i = sum_v w_i(v) dL/dF(v).
#pragma once

#include "distance.hpp"
#include "mlp.hpp"
#include "render.hpp"

#include <numbers>
#include <span>
#include <vector>

namespace worldtok {

using LangDistanceOptions = DistanceOptions;

inline double
lang_distance(std::span<const double> rendered, std::span<const double> target, int lang_dim,
              const DistanceOptions &opts = {}, double *grad = nullptr) {
    return cosine_l2_distance(rendered, target, lang_dim, opts, grad);
}

inline double
lang_distance(const VecX &rendered, const VecX &target, int lang_dim, const DistanceOptions &opts = {},
              double *grad = nullptr) {
    return cosine_l2_distance(rendered, target, lang_dim, opts, grad);
}

struct LangFitOptions {
    int iters = 500;
    double lr = 0.2;
    double final_lr_fraction = 0.05; // cosine decay from lr to lr * fraction
    double coverage = 0.05;          // pixels with weight_sum below this are ignored
    double stop_max_distance = 0.0;  // early stop once every pixel is below; <= 0 disables
    double grad_tolerance = 1e-12;   // converged once max |dL/df| falls below
    LangDistanceOptions distance;
    RenderOptions render;
};

/// Frozen-geometry fitting problem: cached compositing weights per view.
class LangFitProblem {
  public:
    LangFitProblem(const GaussianScene &scene, const std::vector<CameraModel> &cameras,
                   const std::vector<Grid> &targets, const LangFitOptions &opts)
        : mCount(scene.size()), mWidth(scene.latent_width()), mLangDim(scene.lang_dim()), mOpts(opts) {
        require(!cameras.empty(), ErrorKind::InvalidArgument, "fit_language_field: empty camera list");
        require(cameras.size() == targets.size(), ErrorKind::DimensionMismatch,
                "fit_language_field: camera/target count mismatch");
        for (std::size_t v = 0; v < cameras.size(); ++v) {
            const auto &cam = cameras[v];
            const auto &t = targets[v];
            require(t.height() == cam.height && t.width() == cam.width && t.channels() == mWidth,
                    ErrorKind::DimensionMismatch,
                    "fit_language_field: target " + std::to_string(v) + " does not match camera resolution/latent width");
            mViews.push_back(render_weights(scene, cam, opts.render));
        }
        mTargets = targets;
        for (std::size_t v = 0; v < mViews.size(); ++v) {
            for (std::size_t p = 0; p < mViews[v].pixels.size(); ++p) {
                double ws = 0.0;
                for (const auto &w : mViews[v].pixels[p]) ws += w.weight;
                if (ws >= opts.coverage) mActive.push_back({v, p});
            }
        }
    }

    std::size_t parameter_count() const { return mCount * mWidth; }
    std::size_t active_pixels() const { return mActive.size(); }

    /// Mean distance over covered pixels; fills `grad` (size count*width) if non-null.
    double
    loss(const VecX &latents, VecX *grad = nullptr, double *max_distance = nullptr) const {
        require(static_cast<std::size_t>(latents.size()) == parameter_count(), ErrorKind::DimensionMismatch,
                "latent vector size mismatch");
        if (grad) *grad = VecX::Zero(latents.size());
        double total = 0.0, worst = 0.0;
        std::vector<double> f(mWidth), g(mWidth);
        const double inv = mActive.empty() ? 0.0 : 1.0 / static_cast<double>(mActive.size());
        for (const auto &[v, p] : mActive) {
            std::fill(f.begin(), f.end(), 0.0);
            const auto &weights = mViews[v].pixels[p];
            for (const auto &w : weights) {
                for (int k = 0; k < mWidth; ++k) f[k] += w.weight * latents[w.source_index * mWidth + k];
            }
            const double *h = mTargets[v].data().data() + p * mWidth;
            const double d = lang_distance(f, std::span<const double>(h, mWidth), mLangDim, mOpts.distance,
                                           grad ? g.data() : nullptr);
            total += d;
            worst = std::max(worst, d);
            if (grad) {
                for (const auto &w : weights) {
                    for (int k = 0; k < mWidth; ++k) (*grad)[w.source_index * mWidth + k] += inv * w.weight * g[k];
                }
            }
        }
        if (max_distance) *max_distance = worst;
        return total * inv;
    }

  private:
    std::size_t mCount;
    int mWidth;
    int mLangDim;
    LangFitOptions mOpts;
    std::vector<WeightMap> mViews;
    std::vector<Grid> mTargets;
    std::vector<std::pair<std::size_t, std::size_t>> mActive;
};

inline VecX
flatten_latents(const GaussianScene &scene) {
    const int w = scene.latent_width();
    VecX x(static_cast<Eigen::Index>(scene.size()) * w);
    for (std::size_t i = 0; i < scene.size(); ++i) x.segment(static_cast<Eigen::Index>(i) * w, w) = scene.primitives()[i].lang_latent;
    return x;
}

inline std::vector<VecX>
unflatten_latents(const VecX &x, std::size_t count, int width) {
    std::vector<VecX> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = x.segment(static_cast<Eigen::Index>(i) * width, width);
    return out;
}

struct LangFitResult {
    GaussianScene scene;
    std::vector<double> loss_curve;
    double final_loss = 0.0;
    double final_max_distance = 0.0;
    int iterations = 0;
};

inline LangFitResult
fit_language_field(const GaussianScene &scene, const std::vector<CameraModel> &cameras,
                   const std::vector<Grid> &targets, const LangFitOptions &opts = {}) {
    require(opts.iters >= 0 && opts.lr > 0.0, ErrorKind::InvalidArgument, "fit_language_field: bad iters/lr");
    const LangFitProblem problem(scene, cameras, targets, opts);
    VecX x = flatten_latents(scene);
    AdamState adam;
    LangFitResult result{scene, {}, 0.0, 0.0, 0};
    VecX grad;
    for (int it = 0; it < opts.iters; ++it) {
        double worst = 0.0;
        const double l = problem.loss(x, &grad, &worst);
        require(std::isfinite(l), ErrorKind::NumericFailure, "fit_language_field: non-finite loss");
        result.loss_curve.push_back(l);
        if (opts.stop_max_distance > 0.0 && worst < opts.stop_max_distance) break;
        if (grad.size() == 0 || grad.cwiseAbs().maxCoeff() < opts.grad_tolerance) break;
        const double progress = opts.iters > 1 ? static_cast<double>(it) / (opts.iters - 1) : 0.0;
        const double scale = opts.final_lr_fraction + (1.0 - opts.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        adam.update(x, grad, opts.lr * scale);
        result.iterations = it + 1;
    }
    result.final_loss = problem.loss(x, nullptr, &result.final_max_distance);
    result.scene = scene.with_latents(unflatten_latents(x, scene.size(), scene.latent_width()));
    return result;
}

/// Worst relative error between the analytic latent gradient and central
/// differences with step `eps`.
inline double
lang_field_gradient_check(const GaussianScene &scene, const std::vector<CameraModel> &cameras,
                          const std::vector<Grid> &targets, const LangFitOptions &opts = {}, double eps = 1e-4) {
    const LangFitProblem problem(scene, cameras, targets, opts);
    VecX x = flatten_latents(scene);
    VecX grad;
    problem.loss(x, &grad);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double lp = problem.loss(x);
        x[i] = orig - eps;
        const double lm = problem.loss(x);
        x[i] = orig;
        worst = std::max(worst, relative_error(grad[i], (lp - lm) / (2.0 * eps)));
    }
    return worst;
}

} // namespace worldtok

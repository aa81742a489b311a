// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Generation-side math: depth <-> pseudo-RGB, variance-preserving noise
// schedules, v-prediction targets and loss, condition sequence assembly, and
// a small per-pixel denoiser that exercises the training objective.
//
// The image VAE is replaced by the identity, so latents are the raw maps.
#pragma once

#include "container.hpp"
#include "geometry.hpp"
#include "grid.hpp"
#include "mlp.hpp"
#include "rng.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

namespace worldtok {

inline Grid
depth_to_pseudo_rgb(const Grid &depth) {
    require(depth.channels() == 1, ErrorKind::DimensionMismatch, "depth_to_pseudo_rgb: expected 1 channel");
    require(depth.all_finite(), ErrorKind::InvalidArgument, "depth_to_pseudo_rgb: non-finite depth");
    Grid out(depth.height(), depth.width(), 3);
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = depth.at(y, x);
        }
    }
    return out;
}

/// Per-pixel channel mean, offset from channel 0 so equal channels come back
/// bit-exact.
inline Grid
pseudo_rgb_to_depth(const Grid &rgb) {
    require(rgb.channels() == 3, ErrorKind::DimensionMismatch, "pseudo_rgb_to_depth: expected 3 channels");
    Grid out(rgb.height(), rgb.width(), 1);
    for (int y = 0; y < rgb.height(); ++y) {
        for (int x = 0; x < rgb.width(); ++x) {
            const double *p = rgb.pixel(y, x);
            out.at(y, x) = p[0] + ((p[1] - p[0]) + (p[2] - p[0])) / 3.0;
        }
    }
    return out;
}

enum class ScheduleFamily { Cosine, Linear };

inline ScheduleFamily
schedule_family_from_string(const std::string &s) {
    if (s == "cosine") return ScheduleFamily::Cosine;
    if (s == "linear") return ScheduleFamily::Linear;
    fail(ErrorKind::InvalidArgument, "unknown schedule family '" + s + "'");
}

/// alpha[t], sigma[t] for t = 0..T.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> alpha;
    std::vector<double> sigma;

    void
    check_step(int t) const {
        require(t >= 0 && t <= steps, ErrorKind::InvalidArgument,
                "timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) + "]");
    }
};

/// Cosine: alpha = cos(pi t / 2T), sigma = sin(pi t / 2T), with the end
/// points pinned to (1, 0) and (0, 1). Linear: DDPM betas from 1e-4 to 0.02,
/// alpha = sqrt(prod(1 - beta)).
inline NoiseSchedule
make_schedule(int steps, ScheduleFamily family = ScheduleFamily::Cosine) {
    require(steps >= 2, ErrorKind::InvalidArgument, "schedule needs T >= 2");
    NoiseSchedule s;
    s.steps = steps;
    s.alpha.resize(static_cast<std::size_t>(steps) + 1);
    s.sigma.resize(s.alpha.size());
    if (family == ScheduleFamily::Cosine) {
        for (int t = 0; t <= steps; ++t) {
            const double a = std::numbers::pi * t / (2.0 * steps);
            s.alpha[t] = std::cos(a);
            s.sigma[t] = std::sin(a);
        }
        s.alpha[steps] = 0.0;
        s.sigma[steps] = 1.0;
    } else {
        double abar = 1.0;
        s.alpha[0] = 1.0;
        s.sigma[0] = 0.0;
        for (int t = 1; t <= steps; ++t) {
            const double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / (steps - 1);
            abar *= 1.0 - beta;
            s.alpha[t] = std::sqrt(abar);
            s.sigma[t] = std::sqrt(1.0 - abar);
        }
    }
    return s;
}

enum class LatentRole { RgbLatent, DepthLatent, Noise, Noisy, VTarget, Prediction };

struct LatentTensor {
    Grid values;
    LatentRole role = LatentRole::RgbLatent;
};

inline Grid
gaussian_noise(int height, int width, int channels, Rng &rng) {
    Grid g(height, width, channels);
    for (double &v : g.data()) v = rng.normal();
    return g;
}

namespace detail {

template <typename F>
Grid
combine(const Grid &a, const Grid &b, const char *what, F &&f) {
    require_same_shape(a, b, what);
    require(a.all_finite() && b.all_finite(), ErrorKind::InvalidArgument, std::string(what) + ": non-finite input");
    Grid out(a.height(), a.width(), a.channels());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i], b.data()[i]);
    return out;
}

} // namespace detail

/// d_t = alpha_t d + sigma_t eps
inline Grid
add_noise(const Grid &d, const Grid &eps, const NoiseSchedule &s, int t) {
    s.check_step(t);
    const double a = s.alpha[t], sg = s.sigma[t];
    return detail::combine(d, eps, "add_noise", [&](double x, double e) { return a * x + sg * e; });
}

/// Clean-signal convention: v = alpha_t eps - sigma_t d.
inline Grid
v_target(const Grid &d, const Grid &eps, const NoiseSchedule &s, int t) {
    s.check_step(t);
    const double a = s.alpha[t], sg = s.sigma[t];
    return detail::combine(d, eps, "v_target", [&](double x, double e) { return a * e - sg * x; });
}

/// Literal variant written with the noisy signal: v = alpha_t eps - sigma_t d_t.
inline Grid
v_target_noisy(const Grid &d_t, const Grid &eps, const NoiseSchedule &s, int t) {
    return v_target(d_t, eps, s, t);
}

/// d = alpha_t d_t - sigma_t v
inline Grid
recover_clean(const Grid &d_t, const Grid &v, const NoiseSchedule &s, int t) {
    s.check_step(t);
    const double a = s.alpha[t], sg = s.sigma[t];
    return detail::combine(d_t, v, "recover_clean", [&](double x, double w) { return a * x - sg * w; });
}

/// eps = sigma_t d_t + alpha_t v
inline Grid
recover_noise(const Grid &d_t, const Grid &v, const NoiseSchedule &s, int t) {
    s.check_step(t);
    const double a = s.alpha[t], sg = s.sigma[t];
    return detail::combine(d_t, v, "recover_noise", [&](double x, double w) { return sg * x + a * w; });
}

/// Mean squared error over all elements.
inline double
v_loss(const Grid &prediction, const Grid &target) {
    require_same_shape(prediction, target, "v_loss");
    require(prediction.size() > 0, ErrorKind::InvalidArgument, "v_loss: empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double e = prediction.data()[i] - target.data()[i];
        acc += e * e;
    }
    return acc / static_cast<double>(prediction.size());
}

struct TypeEmbeddings {
    VecX visual;
    VecX textual;

    static TypeEmbeddings
    zeros(int dim) {
        return {VecX::Zero(dim), VecX::Zero(dim)};
    }

    static TypeEmbeddings
    random(int dim, std::uint64_t seed, double scale = 0.02) {
        Rng rng(seed);
        TypeEmbeddings t{VecX(dim), VecX(dim)};
        for (int i = 0; i < dim; ++i) t.visual[i] = scale * rng.normal();
        for (int i = 0; i < dim; ++i) t.textual[i] = scale * rng.normal();
        return t;
    }
};

/// [image; text] rows with the matching type embedding added to each row.
inline MatX
assemble_condition_sequence(const MatX &image_tokens, const MatX &text_tokens, const TypeEmbeddings &types) {
    const auto dim = types.visual.size();
    require(types.textual.size() == dim && dim > 0, ErrorKind::DimensionMismatch,
            "condition sequence: type embeddings differ in width");
    require((image_tokens.rows() == 0 || image_tokens.cols() == dim) && (text_tokens.rows() == 0 || text_tokens.cols() == dim),
            ErrorKind::DimensionMismatch, "condition sequence: token width != type embedding width");
    MatX out(image_tokens.rows() + text_tokens.rows(), dim);
    for (Eigen::Index i = 0; i < image_tokens.rows(); ++i) out.row(i) = image_tokens.row(i) + types.visual.transpose();
    for (Eigen::Index i = 0; i < text_tokens.rows(); ++i) {
        out.row(image_tokens.rows() + i) = text_tokens.row(i) + types.textual.transpose();
    }
    return out;
}

// --- toy denoiser -----------------------------------------------------------
//
// Per pixel the network sees [d_t (C), C_I (3), C_D (1), mask (1),
// time embedding (2 * bands), pooled context (context_dim)] and predicts v.
// The context is the mean of the assembled condition sequence (zeros when
// absent). The reference latent and the extra loss argument of the full model
// have no counterpart here.

struct ToyDenoiser {
    MlpParams net;
    int latent_channels = 3;
    int context_dim = 0;
    int time_bands = 8;

    int input_dim() const { return latent_channels + 5 + 2 * time_bands + context_dim; }

    void
    validate() const {
        net.validate();
        require(net.in_dim() == input_dim() && net.out_dim() == latent_channels, ErrorKind::DimensionMismatch,
                "denoiser: network shape does not match its channel layout");
    }
};

inline ToyDenoiser
make_toy_denoiser(int latent_channels, int context_dim, std::uint64_t seed, std::vector<int> hidden = {32, 32},
                  int time_bands = 8) {
    require(latent_channels >= 1 && context_dim >= 0 && time_bands >= 1, ErrorKind::InvalidArgument,
            "denoiser: bad channel layout");
    ToyDenoiser d;
    d.latent_channels = latent_channels;
    d.context_dim = context_dim;
    d.time_bands = time_bands;
    std::vector<int> dims{d.input_dim()};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(latent_channels);
    d.net = make_mlp(dims, seed);
    return d;
}

/// sin/cos of 2^k * pi * t / T for k < bands.
inline VecX
time_embedding(int t, int steps, int bands) {
    VecX e(2 * bands);
    const double u = static_cast<double>(t) / steps;
    for (int k = 0; k < bands; ++k) {
        e[2 * k] = std::sin(std::ldexp(std::numbers::pi * u, k));
        e[2 * k + 1] = std::cos(std::ldexp(std::numbers::pi * u, k));
    }
    return e;
}

struct DenoiserSample {
    Grid clean;                  // H x W x C latent
    SparseConditionMap condition; // C_I, C_D at the same resolution
    MatX context;                // assembled condition sequence (rows); may be empty
};

/// Network inputs, one column per pixel (row-major pixel order).
inline MatX
denoiser_inputs(const ToyDenoiser &model, const Grid &d_t, const DenoiserSample &s, int t, int steps) {
    require(d_t.channels() == model.latent_channels, ErrorKind::DimensionMismatch, "denoiser: latent channel mismatch");
    require(s.condition.height() == d_t.height() && s.condition.width() == d_t.width(), ErrorKind::DimensionMismatch,
            "denoiser: condition resolution differs from latent");
    VecX ctx = VecX::Zero(model.context_dim);
    if (s.context.rows() > 0) {
        require(s.context.cols() == model.context_dim, ErrorKind::DimensionMismatch, "denoiser: context width mismatch");
        ctx = s.context.colwise().mean().transpose();
    }
    const VecX te = time_embedding(t, steps, model.time_bands);
    MatX in(model.input_dim(), static_cast<Eigen::Index>(d_t.pixels()));
    Eigen::Index col = 0;
    for (int y = 0; y < d_t.height(); ++y) {
        for (int x = 0; x < d_t.width(); ++x, ++col) {
            Eigen::Index r = 0;
            for (int c = 0; c < model.latent_channels; ++c) in(r++, col) = d_t.at(y, x, c);
            for (int c = 0; c < 3; ++c) in(r++, col) = s.condition.rgb.at(y, x, c);
            in(r++, col) = s.condition.depth.at(y, x);
            in(r++, col) = s.condition.mask.at(y, x);
            in.block(r, col, te.size(), 1) = te;
            r += te.size();
            in.block(r, col, ctx.size(), 1) = ctx;
        }
    }
    return in;
}

/// Grid (H x W x C) as a C x pixels matrix.
inline MatX
grid_columns(const Grid &g) {
    return Eigen::Map<const MatX>(g.data().data(), g.channels(), static_cast<Eigen::Index>(g.pixels()));
}

inline Grid
columns_grid(const MatX &m, int height, int width) {
    Grid g(height, width, static_cast<int>(m.rows()));
    Eigen::Map<MatX>(g.data().data(), m.rows(), m.cols()) = m;
    return g;
}

inline Grid
denoiser_predict(const ToyDenoiser &model, const Grid &d_t, const DenoiserSample &s, int t, int steps) {
    return columns_grid(mlp_forward_batch(model.net, denoiser_inputs(model, d_t, s, t, steps)).output(), d_t.height(),
                        d_t.width());
}

/// v_loss of the network on prepared inputs, with the gradient w.r.t. the
/// flattened network parameters when requested.
inline double
denoiser_loss(const ToyDenoiser &model, const MatX &inputs, const MatX &target, VecX *grad = nullptr) {
    const MlpCache cache = mlp_forward_batch(model.net, inputs);
    const MatX diff = cache.output() - target;
    const double inv = 1.0 / static_cast<double>(diff.size());
    if (grad) {
        MlpParams g = model.net.zeros_like();
        mlp_backward(model.net, cache, 2.0 * inv * diff, g);
        *grad = g.flatten();
    }
    return inv * diff.squaredNorm();
}

/// Central differences against denoiser_loss; parameters whose perturbation
/// flips a ReLU gate are skipped.
inline double
denoiser_gradient_check(const ToyDenoiser &model, const MatX &inputs, const MatX &target, double eps = 1e-4,
                        std::size_t max_params = 0) {
    VecX grad;
    denoiser_loss(model, inputs, target, &grad);
    const auto base = relu_gates(model.net, inputs);
    ToyDenoiser probe = model;
    VecX theta = model.net.flatten();
    const auto n = static_cast<std::size_t>(theta.size());
    const std::size_t stride = (max_params == 0 || max_params >= n) ? 1 : n / max_params;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
        const auto k = static_cast<Eigen::Index>(i);
        const double orig = theta[k];
        theta[k] = orig + eps;
        probe.net.unflatten(theta);
        const double lp = denoiser_loss(probe, inputs, target);
        const bool kink_p = relu_gates(probe.net, inputs) != base;
        theta[k] = orig - eps;
        probe.net.unflatten(theta);
        const double lm = denoiser_loss(probe, inputs, target);
        const bool kink_m = relu_gates(probe.net, inputs) != base;
        theta[k] = orig;
        if (kink_p || kink_m) continue;
        worst = std::max(worst, relative_error(grad[k], (lp - lm) / (2.0 * eps)));
    }
    return worst;
}

struct DenoiserTrainOptions {
    int iters = 5000;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int fixed_t = -1;         // >= 0 pins the timestep
    int t_min = 1;            // otherwise t is uniform in [t_min, t_max]
    int t_max = -1;           // -1 = T
    double divergence = 1e6;  // loss above this aborts
};

struct DenoiserTrainState {
    AdamState adam;
    std::uint64_t iteration = 0;
};

struct DenoiserTrainResult {
    ToyDenoiser model;
    std::vector<double> loss_curve;
    DenoiserTrainState state;
};

/// Draw for one iteration: sample index, timestep and noise, all from the
/// stream keyed by (seed, iteration).
struct DenoiserDraw {
    std::size_t sample = 0;
    int t = 0;
    Grid noise;
};

inline DenoiserDraw
denoiser_draw(const std::vector<DenoiserSample> &data, const NoiseSchedule &sched, const DenoiserTrainOptions &opts,
              std::uint64_t iteration) {
    Rng rng = Rng::keyed(opts.seed, iteration);
    DenoiserDraw d;
    d.sample = static_cast<std::size_t>(rng.below(data.size()));
    if (opts.fixed_t >= 0) {
        d.t = opts.fixed_t;
    } else {
        const int hi = opts.t_max < 0 ? sched.steps : opts.t_max;
        d.t = opts.t_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - opts.t_min + 1)));
    }
    const Grid &c = data[d.sample].clean;
    d.noise = gaussian_noise(c.height(), c.width(), c.channels(), rng);
    return d;
}

inline DenoiserTrainResult
train_toy_denoiser(ToyDenoiser model, const std::vector<DenoiserSample> &data, const NoiseSchedule &sched,
                   const DenoiserTrainOptions &opts, DenoiserTrainState state = {}) {
    model.validate();
    require(!data.empty(), ErrorKind::InvalidArgument, "train_toy_denoiser: no samples");
    const int hi = opts.t_max < 0 ? sched.steps : opts.t_max;
    require(opts.fixed_t >= 0 ? opts.fixed_t <= sched.steps : (opts.t_min >= 0 && opts.t_min <= hi && hi <= sched.steps),
            ErrorKind::InvalidArgument, "train_toy_denoiser: timestep range outside schedule");
    for (const auto &s : data) {
        require(s.clean.channels() == model.latent_channels && s.clean.all_finite(), ErrorKind::InvalidArgument,
                "train_toy_denoiser: bad clean latent");
    }
    VecX theta = model.net.flatten();
    DenoiserTrainResult res{model, {}, state};
    VecX grad;
    for (int it = 0; it < opts.iters; ++it) {
        const DenoiserDraw draw = denoiser_draw(data, sched, opts, res.state.iteration);
        const DenoiserSample &s = data[draw.sample];
        const Grid d_t = add_noise(s.clean, draw.noise, sched, draw.t);
        const MatX target = grid_columns(v_target(s.clean, draw.noise, sched, draw.t));
        model.net.unflatten(theta);
        const double l = denoiser_loss(model, denoiser_inputs(model, d_t, s, draw.t, sched.steps), target, &grad);
        require(std::isfinite(l) && l <= opts.divergence, ErrorKind::NumericFailure,
                "train_toy_denoiser: loss diverged at iteration " + std::to_string(res.state.iteration));
        res.loss_curve.push_back(l);
        res.state.adam.update(theta, grad, opts.lr);
        ++res.state.iteration;
    }
    model.net.unflatten(theta);
    res.model = std::move(model);
    return res;
}

/// Mean v_loss over a fixed set of (sample, t, noise) draws; used to compare
/// models on identical inputs.
inline double
denoiser_eval_loss(const ToyDenoiser &model, const std::vector<DenoiserSample> &data, const NoiseSchedule &sched,
                   const DenoiserTrainOptions &opts, int draws, std::uint64_t eval_seed) {
    DenoiserTrainOptions o = opts;
    o.seed = eval_seed;
    double total = 0.0;
    for (int i = 0; i < draws; ++i) {
        const DenoiserDraw draw = denoiser_draw(data, sched, o, static_cast<std::uint64_t>(i));
        const DenoiserSample &s = data[draw.sample];
        const Grid d_t = add_noise(s.clean, draw.noise, sched, draw.t);
        total += v_loss(denoiser_predict(model, d_t, s, draw.t, sched.steps),
                        v_target(s.clean, draw.noise, sched, draw.t));
    }
    return total / draws;
}

inline void
save_denoiser(const ToyDenoiser &model, const std::filesystem::path &path, const DenoiserTrainState *state = nullptr) {
    model.validate();
    Container c;
    c.add_json({{"kind", "denoiser"},
                {"latent_channels", model.latent_channels},
                {"context_dim", model.context_dim},
                {"time_bands", model.time_bands},
                {"net", mlp_shape_json(model.net)},
                {"iteration", state ? state->iteration : 0}});
    Bytes params;
    put_vec_f64(params, model.net.flatten());
    c.add("DNSR", std::move(params));
    if (state) c.add("ADAM", encode_adam(state->adam, model.net.parameter_count()));
    c.save(path);
}

inline ToyDenoiser
load_denoiser(const std::filesystem::path &path, DenoiserTrainState *state = nullptr) {
    const Container c = Container::load(path);
    const auto m = c.manifest();
    require(m.value("kind", "") == "denoiser", ErrorKind::SchemaViolation, path.string() + ": not a denoiser checkpoint");
    ToyDenoiser model;
    try {
        model.latent_channels = m.at("latent_channels").get<int>();
        model.context_dim = m.at("context_dim").get<int>();
        model.time_bands = m.at("time_bands").get<int>();
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::SchemaViolation, path.string() + ": " + e.what());
    }
    model.net = mlp_from_shape_json(m.at("net"));
    const std::size_t n = model.net.parameter_count();
    const Chunk &p = c.get("DNSR");
    require(p.payload.size() == n * 8, ErrorKind::Truncated, path.string() + ": DNSR chunk size mismatch");
    ByteReader r(p.payload);
    model.net.unflatten(read_vec_f64(r, n));
    model.validate();
    if (state) {
        *state = {};
        if (const Chunk *a = c.find("ADAM")) state->adam = decode_adam(a->payload, n);
        state->iteration = m.value("iteration", std::uint64_t{0});
    }
    return model;
}

} // namespace worldtok

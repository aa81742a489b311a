// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Scene-wise language autoencoder: 512-d language features squeezed to a 3-d
// latent and decoded back. Trained per scene with hand-written backprop.
#pragma once

#include "container.hpp"
#include "distance.hpp"
#include "mlp.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace worldtok {

inline constexpr int kFeatureDim = 512;
inline constexpr int kLatentDim = 3;

struct AutoencoderModel {
    MlpParams encoder;
    MlpParams decoder;
    std::string scene_id;

    int feature_dim() const { return encoder.in_dim(); }
    int latent_dim() const { return encoder.out_dim(); }

    void
    validate() const {
        encoder.validate();
        decoder.validate();
        require(encoder.out_dim() == decoder.in_dim(), ErrorKind::InvariantViolation,
                "autoencoder: encoder output != decoder input");
        require(encoder.in_dim() == decoder.out_dim(), ErrorKind::InvariantViolation,
                "autoencoder: encoder input != decoder output");
    }

    VecX
    flatten() const {
        VecX a = encoder.flatten(), b = decoder.flatten();
        VecX out(a.size() + b.size());
        out << a, b;
        return out;
    }

    void
    unflatten(const VecX &theta) {
        const auto n = static_cast<Eigen::Index>(encoder.parameter_count());
        require(theta.size() == n + static_cast<Eigen::Index>(decoder.parameter_count()),
                ErrorKind::DimensionMismatch, "autoencoder parameter size mismatch");
        encoder.unflatten(theta.head(n));
        decoder.unflatten(theta.tail(theta.size() - n));
    }
};

/// Encoder widths `dims` (feature first, latent last); the decoder mirrors them.
/// ReLU hidden layers, linear outputs.
inline AutoencoderModel
make_autoencoder(std::string scene_id, std::uint64_t seed,
                 std::vector<int> dims = {kFeatureDim, 256, 64, kLatentDim}) {
    AutoencoderModel m;
    m.encoder = make_mlp(dims, seed);
    std::vector<int> rev(dims.rbegin(), dims.rend());
    m.decoder = make_mlp(rev, Rng::splitmix64(seed));
    m.scene_id = std::move(scene_id);
    return m;
}

inline VecX
encode(const AutoencoderModel &model, const VecX &feature) {
    require(feature.size() == model.feature_dim(), ErrorKind::DimensionMismatch,
            "encode: feature width " + std::to_string(feature.size()) + " != " +
                std::to_string(model.feature_dim()));
    return mlp_forward(model.encoder, feature);
}

inline VecX
decode(const AutoencoderModel &model, const VecX &latent) {
    require(latent.size() == model.latent_dim(), ErrorKind::DimensionMismatch,
            "decode: latent width " + std::to_string(latent.size()) + " != " +
                std::to_string(model.latent_dim()));
    return mlp_forward(model.decoder, latent);
}

struct AeTrainOptions {
    int iters = 2000;
    double lr = 1e-3;
    int batch = 0; // 0 = full batch
    std::uint64_t seed = 0;
    DistanceOptions distance; // reconstruction distance: (1 - cos) + 0.1 * L2^2
};

struct AeTrainState {
    AdamState adam;
    std::uint64_t iteration = 0;
};

/// Mean reconstruction distance over the columns of `batch` (D x B) and,
/// if `grad` is non-null, its gradient w.r.t. the flattened parameters.
inline double
ae_loss(const AutoencoderModel &model, const MatX &batch, const DistanceOptions &dist, VecX *grad = nullptr) {
    const MlpCache enc = mlp_forward_batch(model.encoder, batch);
    const MlpCache dec = mlp_forward_batch(model.decoder, enc.output());
    const MatX &recon = dec.output();
    const double inv = 1.0 / static_cast<double>(batch.cols());
    MatX g_recon(recon.rows(), recon.cols());
    double total = 0.0;
    for (Eigen::Index c = 0; c < batch.cols(); ++c) {
        const VecX r = recon.col(c), x = batch.col(c);
        VecX g(r.size());
        total += cosine_l2_distance(r, x, static_cast<int>(r.size()), dist, g.data());
        g_recon.col(c) = inv * g;
    }
    if (grad) {
        MlpParams ge = model.encoder.zeros_like(), gd = model.decoder.zeros_like();
        const MatX g_latent = mlp_backward(model.decoder, dec, g_recon, gd);
        mlp_backward(model.encoder, enc, g_latent, ge);
        VecX a = ge.flatten(), b = gd.flatten();
        grad->resize(a.size() + b.size());
        *grad << a, b;
    }
    return total * inv;
}

inline MatX
stack_columns(const std::vector<VecX> &cols) {
    require(!cols.empty(), ErrorKind::InvalidArgument, "empty feature list");
    MatX m(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
        require(cols[i].size() == m.rows(), ErrorKind::DimensionMismatch, "ragged feature list");
        m.col(static_cast<Eigen::Index>(i)) = cols[i];
    }
    return m;
}

/// Column indices for minibatch `iteration`, drawn without replacement from a
/// stream keyed by (seed, iteration).
inline std::vector<Eigen::Index>
minibatch_indices(std::size_t count, int batch, std::uint64_t seed, std::uint64_t iteration) {
    std::vector<Eigen::Index> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<Eigen::Index>(i);
    if (batch <= 0 || static_cast<std::size_t>(batch) >= count) return idx;
    Rng rng = Rng::keyed(seed, iteration);
    for (int i = 0; i < batch; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(count - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(batch);
    return idx;
}

struct AeTrainResult {
    AutoencoderModel model;
    std::vector<double> loss_curve;
    AeTrainState state;
};

/// Adam on the reconstruction objective. Passing the `state` of a previous
/// run continues it exactly (same minibatches, same moments).
inline AeTrainResult
train_autoencoder(AutoencoderModel model, const std::vector<VecX> &features, const AeTrainOptions &opts,
                  AeTrainState state = {}) {
    model.validate();
    require(!features.empty(), ErrorKind::InvalidArgument, "train_autoencoder: no features");
    const MatX all = stack_columns(features);
    require(all.rows() == model.feature_dim(), ErrorKind::DimensionMismatch,
            "train_autoencoder: feature width mismatch");
    require(all.allFinite(), ErrorKind::InvalidArgument, "train_autoencoder: non-finite features");
    VecX theta = model.flatten();
    AeTrainResult res{model, {}, state};
    VecX grad;
    for (int it = 0; it < opts.iters; ++it) {
        const auto cols = minibatch_indices(features.size(), opts.batch, opts.seed, res.state.iteration);
        const MatX batch = all(Eigen::all, cols);
        model.unflatten(theta);
        const double l = ae_loss(model, batch, opts.distance, &grad);
        require(std::isfinite(l) && grad.allFinite(), ErrorKind::NumericFailure,
                "train_autoencoder: non-finite loss at iteration " + std::to_string(res.state.iteration));
        res.loss_curve.push_back(l);
        res.state.adam.update(theta, grad, opts.lr);
        ++res.state.iteration;
    }
    model.unflatten(theta);
    res.model = std::move(model);
    return res;
}

/// Central-difference check (step eps) of the reconstruction gradient on one
/// sample. `max_params` > 0 checks an evenly strided subset. Parameters whose
/// perturbation flips a ReLU gate are skipped. Returns the worst relative
/// error.
inline double
gradient_check(const AutoencoderModel &model, const VecX &sample, double eps = 1e-4, std::size_t max_params = 0,
               const DistanceOptions &dist = {}) {
    MatX x(sample.size(), 1);
    x.col(0) = sample;
    VecX grad;
    ae_loss(model, x, dist, &grad);
    auto gates = [&](const AutoencoderModel &m) {
        auto g = relu_gates(m.encoder, x);
        const auto d = relu_gates(m.decoder, mlp_forward_batch(m.encoder, x).output());
        g.insert(g.end(), d.begin(), d.end());
        return g;
    };
    const auto base = gates(model);
    AutoencoderModel probe = model;
    VecX theta = model.flatten();
    const auto n = static_cast<std::size_t>(theta.size());
    const std::size_t stride = (max_params == 0 || max_params >= n) ? 1 : n / max_params;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
        const auto k = static_cast<Eigen::Index>(i);
        const double orig = theta[k];
        theta[k] = orig + eps;
        probe.unflatten(theta);
        const double lp = ae_loss(probe, x, dist);
        const bool kink_p = gates(probe) != base;
        theta[k] = orig - eps;
        probe.unflatten(theta);
        const double lm = ae_loss(probe, x, dist);
        const bool kink_m = gates(probe) != base;
        theta[k] = orig;
        if (kink_p || kink_m) continue;
        worst = std::max(worst, relative_error(grad[k], (lp - lm) / (2.0 * eps)));
    }
    return worst;
}

inline double
cosine_similarity(const VecX &a, const VecX &b) {
    const double d = a.norm() * b.norm();
    return d > 0.0 ? a.dot(b) / d : 0.0;
}

// Checkpoint: GSDW container with a "JSON" manifest (layer shapes), an "AENC"
// chunk of float64 parameters (encoder then decoder) and an optional "ADAM"
// chunk carrying optimizer moments and the iteration counter.

inline Container
autoencoder_container(const AutoencoderModel &model, const AeTrainState *state = nullptr) {
    Container c;
    c.add_json({{"kind", "autoencoder"},
                {"scene_id", model.scene_id},
                {"encoder", mlp_shape_json(model.encoder)},
                {"decoder", mlp_shape_json(model.decoder)},
                {"iteration", state ? state->iteration : 0}});
    Bytes params;
    put_vec_f64(params, model.flatten());
    c.add("AENC", std::move(params));
    if (state) c.add("ADAM", encode_adam(state->adam, model.encoder.parameter_count() + model.decoder.parameter_count()));
    return c;
}

inline void
save_autoencoder(const AutoencoderModel &model, const std::filesystem::path &path, const AeTrainState *state = nullptr) {
    autoencoder_container(model, state).save(path);
}

inline AutoencoderModel
load_autoencoder(const std::filesystem::path &path, AeTrainState *state = nullptr) {
    const Container c = Container::load(path);
    const auto m = c.manifest();
    require(m.value("kind", "") == "autoencoder", ErrorKind::SchemaViolation, path.string() + ": not an autoencoder checkpoint");
    AutoencoderModel model;
    model.scene_id = m.value("scene_id", "");
    model.encoder = mlp_from_shape_json(m.at("encoder"));
    model.decoder = mlp_from_shape_json(m.at("decoder"));
    const std::size_t n = model.encoder.parameter_count() + model.decoder.parameter_count();
    const Chunk &p = c.get("AENC");
    require(p.payload.size() == n * 8, ErrorKind::Truncated, path.string() + ": AENC chunk size mismatch");
    ByteReader r(p.payload);
    model.unflatten(read_vec_f64(r, n));
    model.validate();
    if (state) {
        *state = {};
        if (const Chunk *a = c.find("ADAM")) state->adam = decode_adam(a->payload, n);
        state->iteration = m.value("iteration", std::uint64_t{0});
    }
    return model;
}

} // namespace worldtok

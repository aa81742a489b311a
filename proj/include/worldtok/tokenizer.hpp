// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Gaussian -> token projector. Each attribute (position, opacity, scale,
// rotation, decoded language feature) goes through its own MLP head into a
// shared token space; the head outputs are mixed by softmax fusion weights.
#pragma once

#include "autoencoder.hpp"
#include "container.hpp"
#include "mlp.hpp"
#include "parallel.hpp"
#include "scene.hpp"
#include "scene_io.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

namespace worldtok {

struct FourierConfig {
    int num_bands = 10;
    double base = 2.0;

    int dim() const { return 6 * num_bands; }

    void
    validate() const {
        require(num_bands >= 1, ErrorKind::InvalidArgument, "Fourier num_bands must be >= 1");
        require(std::isfinite(base) && base > 0.0, ErrorKind::InvalidArgument, "Fourier base must be > 0");
    }
};

/// Per coordinate: sin(b^k pi x), cos(b^k pi x) for k = 0..L-1.
inline VecX
fourier_embed(const Vec3 &x, const FourierConfig &cfg = {}) {
    cfg.validate();
    require(x.allFinite(), ErrorKind::InvalidArgument, "fourier_embed: non-finite position");
    VecX out(cfg.dim());
    Eigen::Index j = 0;
    for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < cfg.num_bands; ++k) {
            const double a = std::pow(cfg.base, k) * std::numbers::pi * x[c];
            out[j++] = std::sin(a);
            out[j++] = std::cos(a);
        }
    }
    return out;
}

enum Head : int { kHeadPosition = 0, kHeadOpacity, kHeadScale, kHeadRotation, kHeadFeature, kNumHeads };

inline constexpr std::array<const char *, kNumHeads> kHeadNames = {"x", "o", "s", "r", "f"};

using HeadInputs = std::array<VecX, kNumHeads>;

struct ProjectorParams {
    std::array<MlpParams, kNumHeads> heads;
    VecX fusion_logits = VecX::Zero(kNumHeads);
    FourierConfig fourier;

    int token_dim() const { return heads[0].out_dim(); }

    /// Softmax of the fusion logits (max-shifted).
    VecX
    fusion_weights() const {
        const VecX e = (fusion_logits.array() - fusion_logits.maxCoeff()).exp();
        return e / e.sum();
    }

    void
    validate() const {
        fourier.validate();
        require(fusion_logits.size() == kNumHeads && fusion_logits.allFinite(), ErrorKind::InvariantViolation,
                "projector: fusion logits must be 5 finite values");
        const std::array<int, 4> fixed = {fourier.dim(), 1, 3, 4};
        for (int p = 0; p < kNumHeads; ++p) {
            heads[p].validate();
            require(heads[p].out_dim() == token_dim(), ErrorKind::DimensionMismatch,
                    std::string("projector: head ") + kHeadNames[p] + " output width differs");
            if (p < kHeadFeature) {
                require(heads[p].in_dim() == fixed[p], ErrorKind::DimensionMismatch,
                        std::string("projector: head ") + kHeadNames[p] + " input width " +
                            std::to_string(heads[p].in_dim()) + " != " + std::to_string(fixed[p]));
            }
        }
    }

    std::size_t
    parameter_count() const {
        std::size_t n = kNumHeads;
        for (const auto &h : heads) n += h.parameter_count();
        return n;
    }

    /// Heads in x, o, s, r, f order followed by the fusion logits.
    VecX
    flatten() const {
        VecX out(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index o = 0;
        for (const auto &h : heads) {
            const VecX t = h.flatten();
            out.segment(o, t.size()) = t;
            o += t.size();
        }
        out.tail(kNumHeads) = fusion_logits;
        return out;
    }

    void
    unflatten(const VecX &theta) {
        require(theta.size() == static_cast<Eigen::Index>(parameter_count()), ErrorKind::DimensionMismatch,
                "projector parameter size mismatch");
        Eigen::Index o = 0;
        for (auto &h : heads) {
            const auto n = static_cast<Eigen::Index>(h.parameter_count());
            h.unflatten(theta.segment(o, n));
            o += n;
        }
        fusion_logits = theta.tail(kNumHeads);
    }
};

/// One hidden ReLU layer of width `hidden` per head; fusion logits start equal.
inline ProjectorParams
make_projector(std::uint64_t seed, int token_dim = 256, int hidden = 128, int feature_dim = kFeatureDim,
               FourierConfig fourier = {}) {
    fourier.validate();
    require(token_dim >= 1 && hidden >= 1 && feature_dim >= 1, ErrorKind::InvalidArgument,
            "make_projector: widths must be >= 1");
    ProjectorParams p;
    p.fourier = fourier;
    const std::array<int, kNumHeads> in = {fourier.dim(), 1, 3, 4, feature_dim};
    for (int h = 0; h < kNumHeads; ++h) {
        p.heads[h] = make_mlp({in[h], hidden, token_dim}, Rng::splitmix64(seed + static_cast<std::uint64_t>(h)));
    }
    return p;
}

struct GaussianToken {
    VecX values;
    std::size_t source_index = 0;
};

/// Raw head inputs for one primitive. Multi-level latents feed their first
/// block to the decoder.
inline HeadInputs
head_inputs(const GaussianPrimitive &prim, const AutoencoderModel &decoder, const FourierConfig &cfg) {
    const int d = decoder.latent_dim();
    require(prim.lang_latent.size() >= d && prim.lang_latent.size() % d == 0, ErrorKind::DimensionMismatch,
            "tokenize: latent width " + std::to_string(prim.lang_latent.size()) +
                " does not match decoder latent width " + std::to_string(d));
    HeadInputs in;
    in[kHeadPosition] = fourier_embed(prim.position, cfg);
    in[kHeadOpacity] = VecX::Constant(1, prim.opacity());
    in[kHeadScale] = prim.scale();
    in[kHeadRotation] = (VecX(4) << prim.rotation.x(), prim.rotation.y(), prim.rotation.z(), prim.rotation.w()).finished();
    in[kHeadFeature] = decode(decoder, prim.lang_latent.head(d));
    return in;
}

inline VecX
project_inputs(const ProjectorParams &proj, const HeadInputs &in) {
    const VecX a = proj.fusion_weights();
    VecX token = VecX::Zero(proj.token_dim());
    for (int p = 0; p < kNumHeads; ++p) token += a[p] * mlp_forward(proj.heads[p], in[p]);
    return token;
}

inline GaussianToken
tokenize_gaussian(const GaussianPrimitive &prim, const ProjectorParams &proj, const AutoencoderModel &decoder,
                  std::size_t source_index = 0) {
    require(proj.heads[kHeadFeature].in_dim() == decoder.feature_dim(), ErrorKind::DimensionMismatch,
            "tokenize: feature head input != decoder output width");
    return {project_inputs(proj, head_inputs(prim, decoder, proj.fourier)), source_index};
}

inline std::vector<GaussianToken>
tokenize_scene(const GaussianScene &scene, const ProjectorParams &proj, const AutoencoderModel &decoder,
               int threads = 1) {
    proj.validate();
    require(scene.lang_dim() == decoder.latent_dim(), ErrorKind::DimensionMismatch,
            "tokenize: scene lang_dim " + std::to_string(scene.lang_dim()) + " != decoder latent width " +
                std::to_string(decoder.latent_dim()));
    std::vector<GaussianToken> out(scene.size());
    parallel_for(scene.size(), threads,
                 [&](std::size_t i) { out[i] = tokenize_gaussian(scene.primitives()[i], proj, decoder, i); });
    return out;
}

// --- training --------------------------------------------------------------

/// Head inputs for a batch of primitives, one column per primitive.
struct ProjectorBatch {
    std::array<MatX, kNumHeads> inputs;

    Eigen::Index size() const { return inputs[0].cols(); }
};

inline ProjectorBatch
make_projector_batch(const GaussianScene &scene, const AutoencoderModel &decoder, const FourierConfig &cfg) {
    ProjectorBatch b;
    const auto n = static_cast<Eigen::Index>(scene.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const HeadInputs in = head_inputs(scene.primitives()[static_cast<std::size_t>(i)], decoder, cfg);
        for (int p = 0; p < kNumHeads; ++p) {
            if (i == 0) b.inputs[p].resize(in[p].size(), n);
            b.inputs[p].col(i) = in[p];
        }
    }
    return b;
}

/// Mean over columns of 0.5 * |token - target|^2, with the gradient w.r.t.
/// the flattened projector parameters when `grad` is non-null.
inline double
projector_loss(const ProjectorParams &proj, const ProjectorBatch &batch, const MatX &targets, VecX *grad = nullptr) {
    require(targets.rows() == proj.token_dim() && targets.cols() == batch.size(), ErrorKind::DimensionMismatch,
            "projector_loss: target shape mismatch");
    const VecX a = proj.fusion_weights();
    std::array<MlpCache, kNumHeads> caches;
    MatX token = MatX::Zero(targets.rows(), targets.cols());
    for (int p = 0; p < kNumHeads; ++p) {
        caches[p] = mlp_forward_batch(proj.heads[p], batch.inputs[p]);
        token += a[p] * caches[p].output();
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    const MatX diff = token - targets;
    const double loss = 0.5 * inv * diff.squaredNorm();
    if (grad) {
        const MatX g = inv * diff;
        const double tg = (token.array() * g.array()).sum();
        grad->resize(static_cast<Eigen::Index>(proj.parameter_count()));
        Eigen::Index o = 0;
        for (int p = 0; p < kNumHeads; ++p) {
            MlpParams gp = proj.heads[p].zeros_like();
            mlp_backward(proj.heads[p], caches[p], a[p] * g, gp);
            const VecX t = gp.flatten();
            grad->segment(o, t.size()) = t;
            o += t.size();
            // d alpha_q / d logit_p = alpha_q (delta_qp - alpha_p)
            (*grad)[grad->size() - kNumHeads + p] = a[p] * ((caches[p].output().array() * g.array()).sum() - tg);
        }
    }
    return loss;
}

/// Central differences on 0.5 |token - target|^2 for one primitive (target
/// defaults to zero). `max_params` > 0 checks a strided subset of the head
/// weights; the fusion logits are always checked. Parameters whose
/// perturbation flips a ReLU gate are skipped.
inline double
projector_gradient_check(const ProjectorParams &proj, const AutoencoderModel &decoder,
                         const GaussianPrimitive &prim, const VecX &target = {}, double eps = 1e-4,
                         std::size_t max_params = 0) {
    proj.validate();
    ProjectorBatch batch;
    const HeadInputs in = head_inputs(prim, decoder, proj.fourier);
    for (int p = 0; p < kNumHeads; ++p) batch.inputs[p] = in[p];
    const MatX t = target.size() ? MatX(target) : MatX(MatX::Zero(proj.token_dim(), 1));
    VecX grad;
    projector_loss(proj, batch, t, &grad);
    auto gates = [&](const ProjectorParams &pp) {
        std::vector<bool> g;
        for (int p = 0; p < kNumHeads; ++p) {
            const auto h = relu_gates(pp.heads[p], batch.inputs[p]);
            g.insert(g.end(), h.begin(), h.end());
        }
        return g;
    };
    const auto base = gates(proj);
    ProjectorParams probe = proj;
    VecX theta = proj.flatten();
    const auto n = static_cast<std::size_t>(theta.size());
    const std::size_t heads = n - kNumHeads;
    const std::size_t stride = (max_params == 0 || max_params >= heads) ? 1 : heads / max_params;
    double worst = 0.0;
    auto check = [&](std::size_t i) {
        const auto k = static_cast<Eigen::Index>(i);
        const double orig = theta[k];
        theta[k] = orig + eps;
        probe.unflatten(theta);
        const double lp = projector_loss(probe, batch, t);
        const bool kink_p = gates(probe) != base;
        theta[k] = orig - eps;
        probe.unflatten(theta);
        const double lm = projector_loss(probe, batch, t);
        const bool kink_m = gates(probe) != base;
        theta[k] = orig;
        if (kink_p || kink_m) return;
        worst = std::max(worst, relative_error(grad[k], (lp - lm) / (2.0 * eps)));
    };
    for (std::size_t i = 0; i < heads; i += stride) check(i);
    for (std::size_t i = heads; i < n; ++i) check(i);
    return worst;
}

struct ProjectorTrainOptions {
    int iters = 500;
    double lr = 1e-3;
    int batch = 0; // 0 = full batch
    std::uint64_t seed = 0;
};

struct ProjectorTrainState {
    AdamState adam;
    std::uint64_t iteration = 0;
};

struct ProjectorTrainResult {
    ProjectorParams params;
    std::vector<double> loss_curve;
    ProjectorTrainState state;
};

/// Regresses tokens onto `targets` (token_dim x N). Minibatches come from a
/// stream keyed by (seed, iteration), so a resumed run matches an unbroken one.
inline ProjectorTrainResult
train_projector(ProjectorParams proj, const ProjectorBatch &data, const MatX &targets,
                const ProjectorTrainOptions &opts, ProjectorTrainState state = {}) {
    proj.validate();
    require(data.size() >= 1, ErrorKind::InvalidArgument, "train_projector: empty dataset");
    require(targets.allFinite(), ErrorKind::InvalidArgument, "train_projector: non-finite targets");
    VecX theta = proj.flatten();
    ProjectorTrainResult res{proj, {}, state};
    VecX grad;
    for (int it = 0; it < opts.iters; ++it) {
        const auto cols = minibatch_indices(static_cast<std::size_t>(data.size()), opts.batch, opts.seed,
                                            res.state.iteration);
        ProjectorBatch b;
        for (int p = 0; p < kNumHeads; ++p) b.inputs[p] = data.inputs[p](Eigen::all, cols);
        proj.unflatten(theta);
        const double l = projector_loss(proj, b, targets(Eigen::all, cols), &grad);
        require(std::isfinite(l) && grad.allFinite(), ErrorKind::NumericFailure,
                "train_projector: non-finite loss at iteration " + std::to_string(res.state.iteration));
        res.loss_curve.push_back(l);
        res.state.adam.update(theta, grad, opts.lr);
        ++res.state.iteration;
    }
    proj.unflatten(theta);
    res.params = std::move(proj);
    return res;
}

// --- files -------------------------------------------------------------------

inline void
save_projector(const ProjectorParams &proj, const std::filesystem::path &path,
               const ProjectorTrainState *state = nullptr) {
    proj.validate();
    nlohmann::json heads = nlohmann::json::object();
    for (int p = 0; p < kNumHeads; ++p) heads[kHeadNames[p]] = mlp_shape_json(proj.heads[p]);
    Container c;
    c.add_json({{"kind", "projector"},
                {"token_dim", proj.token_dim()},
                {"fourier", {{"num_bands", proj.fourier.num_bands}, {"base", proj.fourier.base}}},
                {"heads", heads},
                {"iteration", state ? state->iteration : 0}});
    Bytes params;
    put_vec_f64(params, proj.flatten());
    c.add("PROJ", std::move(params));
    if (state) c.add("ADAM", encode_adam(state->adam, proj.parameter_count()));
    c.save(path);
}

inline ProjectorParams
load_projector(const std::filesystem::path &path, ProjectorTrainState *state = nullptr) {
    const Container c = Container::load(path);
    const auto m = c.manifest();
    require(m.value("kind", "") == "projector", ErrorKind::SchemaViolation, path.string() + ": not a projector checkpoint");
    ProjectorParams proj;
    try {
        proj.fourier.num_bands = m.at("fourier").at("num_bands").get<int>();
        proj.fourier.base = m.at("fourier").at("base").get<double>();
        for (int p = 0; p < kNumHeads; ++p) proj.heads[p] = mlp_from_shape_json(m.at("heads").at(kHeadNames[p]));
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::SchemaViolation, path.string() + ": " + e.what());
    }
    const std::size_t n = proj.parameter_count();
    const Chunk &chunk = c.get("PROJ");
    require(chunk.payload.size() == n * 8, ErrorKind::Truncated, path.string() + ": PROJ chunk size mismatch");
    ByteReader r(chunk.payload);
    proj.unflatten(read_vec_f64(r, n));
    proj.validate();
    if (state) {
        *state = {};
        if (const Chunk *a = c.find("ADAM")) state->adam = decode_adam(a->payload, n);
        state->iteration = m.value("iteration", std::uint64_t{0});
    }
    return proj;
}

/// Token dump as stored on disk: float32 rows plus per-token salience
/// (sigmoid opacity) used by the top-k sampler.
struct TokenSet {
    std::string scene_id;
    std::uint64_t source_hash = 0;
    MatX tokens; // N x token_dim
    VecX salience;

    std::size_t size() const { return static_cast<std::size_t>(tokens.rows()); }
};

inline std::string
hex64(std::uint64_t v) {
    static const char *digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

inline TokenSet
make_token_set(const GaussianScene &scene, const std::vector<GaussianToken> &tokens) {
    require(tokens.size() == scene.size() && !tokens.empty(), ErrorKind::DimensionMismatch,
            "token count != primitive count");
    TokenSet t;
    t.scene_id = scene.scene_id();
    t.source_hash = fnv1a64(encode_scene(scene));
    const auto dim = tokens.front().values.size();
    t.tokens.resize(static_cast<Eigen::Index>(tokens.size()), dim);
    t.salience.resize(static_cast<Eigen::Index>(tokens.size()));
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        t.tokens.row(r) = tokens[i].values.transpose();
        t.salience[r] = scene.primitives()[tokens[i].source_index].opacity();
    }
    return t;
}

inline void
save_tokens(const TokenSet &t, const std::filesystem::path &path) {
    Container c;
    c.add_json({{"kind", "tokens"},
                {"scene_id", t.scene_id},
                {"source_scene_hash", hex64(t.source_hash)},
                {"count", t.tokens.rows()},
                {"token_dim", t.tokens.cols()}});
    Bytes rows, sal;
    for (Eigen::Index i = 0; i < t.tokens.rows(); ++i) {
        for (Eigen::Index j = 0; j < t.tokens.cols(); ++j) put_f32(rows, static_cast<float>(t.tokens(i, j)));
        put_f32(sal, static_cast<float>(t.salience[i]));
    }
    c.add("GTOK", std::move(rows));
    c.add("SALI", std::move(sal));
    c.save(path);
}

inline TokenSet
load_tokens(const std::filesystem::path &path) {
    const Container c = Container::load(path);
    const auto m = c.manifest();
    require(m.value("kind", "") == "tokens", ErrorKind::SchemaViolation, path.string() + ": not a token dump");
    TokenSet t;
    Eigen::Index n = 0, dim = 0;
    try {
        t.scene_id = m.at("scene_id").get<std::string>();
        t.source_hash = std::stoull(m.at("source_scene_hash").get<std::string>(), nullptr, 16);
        n = m.at("count").get<Eigen::Index>();
        dim = m.at("token_dim").get<Eigen::Index>();
    } catch (const std::exception &e) {
        fail(ErrorKind::SchemaViolation, path.string() + ": " + e.what());
    }
    require(n >= 1 && dim >= 1, ErrorKind::SchemaViolation, path.string() + ": empty token dump");
    const Chunk &rows = c.get("GTOK");
    require(rows.payload.size() == static_cast<std::size_t>(n * dim * 4), ErrorKind::Truncated,
            path.string() + ": GTOK chunk size mismatch");
    ByteReader r(rows.payload);
    t.tokens.resize(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) t.tokens(i, j) = r.f32();
    }
    t.salience = VecX::Ones(n);
    if (const Chunk *s = c.find("SALI")) {
        require(s->payload.size() == static_cast<std::size_t>(n * 4), ErrorKind::Truncated,
                path.string() + ": SALI chunk size mismatch");
        ByteReader sr(s->payload);
        for (Eigen::Index i = 0; i < n; ++i) t.salience[i] = sr.f32();
    }
    return t;
}

} // namespace worldtok

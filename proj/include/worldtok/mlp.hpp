// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense MLP with explicit backpropagation and an Adam optimizer,
// shared by the language autoencoder, the tokenizer heads and the toy
// denoiser. Parameters are doubles; batches are column-major (dim x batch).
#pragma once

#include "binary.hpp"
#include "error.hpp"
#include "rng.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace worldtok {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

enum class Activation { Identity, Relu };

inline std::string
to_string(Activation a) {
    return a == Activation::Relu ? "relu" : "identity";
}

inline Activation
activation_from_string(const std::string &s) {
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    fail(ErrorKind::SchemaViolation, "unknown activation '" + s + "'");
}

struct DenseLayer {
    MatX weights; // out x in
    VecX biases;  // out
    Activation activation = Activation::Identity;

    int in_dim() const { return static_cast<int>(weights.cols()); }
    int out_dim() const { return static_cast<int>(weights.rows()); }
};

struct MlpParams {
    std::vector<DenseLayer> layers;

    int in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    int out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

    std::size_t
    parameter_count() const {
        std::size_t n = 0;
        for (const auto &l : layers) n += l.weights.size() + l.biases.size();
        return n;
    }

    void
    validate() const {
        require(!layers.empty(), ErrorKind::InvariantViolation, "MLP has no layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto &l = layers[i];
            require(l.biases.size() == l.weights.rows(), ErrorKind::InvariantViolation,
                    "MLP layer " + std::to_string(i) + ": bias size != output width");
            require(l.weights.allFinite() && l.biases.allFinite(), ErrorKind::InvariantViolation,
                    "MLP layer " + std::to_string(i) + ": non-finite parameters");
            if (i > 0) {
                require(l.in_dim() == layers[i - 1].out_dim(), ErrorKind::InvariantViolation,
                        "MLP layer " + std::to_string(i) + ": shapes do not chain");
            }
        }
    }

    /// Parameters flattened layer by layer: weights (column-major), then biases.
    VecX
    flatten() const {
        VecX theta(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index k = 0;
        for (const auto &l : layers) {
            theta.segment(k, l.weights.size()) = l.weights.reshaped();
            k += l.weights.size();
            theta.segment(k, l.biases.size()) = l.biases;
            k += l.biases.size();
        }
        return theta;
    }

    void
    unflatten(const VecX &theta) {
        require(static_cast<std::size_t>(theta.size()) == parameter_count(),
                ErrorKind::DimensionMismatch, "parameter vector size mismatch");
        Eigen::Index k = 0;
        for (auto &l : layers) {
            l.weights.reshaped() = theta.segment(k, l.weights.size());
            k += l.weights.size();
            l.biases = theta.segment(k, l.biases.size());
            k += l.biases.size();
        }
    }

    MlpParams
    zeros_like() const {
        MlpParams z = *this;
        for (auto &l : z.layers) {
            l.weights.setZero();
            l.biases.setZero();
        }
        return z;
    }
};

/// Layer widths `dims` (input first); hidden layers get `hidden`, the last
/// layer `output`. Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
inline MlpParams
make_mlp(const std::vector<int> &dims, std::uint64_t seed, Activation hidden = Activation::Relu,
         Activation output = Activation::Identity) {
    require(dims.size() >= 2, ErrorKind::InvalidArgument, "MLP needs at least two widths");
    Rng rng(seed);
    MlpParams p;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        require(dims[i] >= 1 && dims[i + 1] >= 1, ErrorKind::InvalidArgument, "MLP widths must be >= 1");
        DenseLayer l;
        l.weights.resize(dims[i + 1], dims[i]);
        const double limit = std::sqrt(6.0 / (dims[i] + dims[i + 1]));
        for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
            for (Eigen::Index r = 0; r < l.weights.rows(); ++r) l.weights(r, c) = rng.uniform(-limit, limit);
        }
        l.biases = VecX::Zero(dims[i + 1]);
        l.activation = (i + 2 == dims.size()) ? output : hidden;
        p.layers.push_back(std::move(l));
    }
    return p;
}

/// Activations kept for the backward pass: inputs[i] feeds layer i,
/// pre[i] is its pre-activation. inputs.back() is the network output.
struct MlpCache {
    std::vector<MatX> inputs;
    std::vector<MatX> pre;

    const MatX &output() const { return inputs.back(); }
};

inline MatX
apply_activation(const MatX &z, Activation a) {
    return a == Activation::Relu ? MatX(z.cwiseMax(0.0)) : z;
}

inline MlpCache
mlp_forward_batch(const MlpParams &p, const MatX &x) {
    require(!p.layers.empty() && x.rows() == p.in_dim(), ErrorKind::DimensionMismatch,
            "MLP input width " + std::to_string(x.rows()) + " != " + std::to_string(p.in_dim()));
    MlpCache cache;
    cache.inputs.reserve(p.layers.size() + 1);
    cache.pre.reserve(p.layers.size());
    cache.inputs.push_back(x);
    for (const auto &l : p.layers) {
        MatX z = l.weights * cache.inputs.back();
        z.colwise() += l.biases;
        cache.inputs.push_back(apply_activation(z, l.activation));
        cache.pre.push_back(std::move(z));
    }
    return cache;
}

inline VecX
mlp_forward(const MlpParams &p, const VecX &x) {
    require(x.allFinite(), ErrorKind::InvalidArgument, "MLP input is not finite");
    return mlp_forward_batch(p, x).output().col(0);
}

/// Backpropagates dL/d(output) through the cached pass. Accumulates parameter
/// gradients into `grads` (same shapes as `p`) and returns dL/d(input).
inline MatX
mlp_backward(const MlpParams &p, const MlpCache &cache, const MatX &grad_out, MlpParams &grads) {
    MatX g = grad_out;
    for (std::size_t i = p.layers.size(); i-- > 0;) {
        const auto &l = p.layers[i];
        if (l.activation == Activation::Relu) {
            g = g.cwiseProduct((cache.pre[i].array() > 0.0).cast<double>().matrix());
        }
        grads.layers[i].weights.noalias() += g * cache.inputs[i].transpose();
        grads.layers[i].biases += g.rowwise().sum();
        g = l.weights.transpose() * g;
    }
    return g;
}

/// Adam over a flat parameter vector (beta1 0.9, beta2 0.999, eps 1e-8).
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    VecX m;
    VecX v;

    void
    update(VecX &theta, const VecX &grad, double lr) {
        require(grad.size() == theta.size(), ErrorKind::DimensionMismatch, "Adam: gradient size mismatch");
        if (m.size() != theta.size()) {
            m = VecX::Zero(theta.size());
            v = VecX::Zero(theta.size());
        }
        ++step;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

// --- serialization --------------------------------------------------------

inline nlohmann::json
mlp_shape_json(const MlpParams &p) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto &l : p.layers) {
        layers.push_back({{"in", l.in_dim()}, {"out", l.out_dim()}, {"activation", to_string(l.activation)}});
    }
    return layers;
}

inline MlpParams
mlp_from_shape_json(const nlohmann::json &j) {
    MlpParams p;
    try {
        for (const auto &l : j) {
            DenseLayer d;
            d.weights = MatX::Zero(l.at("out").get<int>(), l.at("in").get<int>());
            d.biases = VecX::Zero(l.at("out").get<int>());
            d.activation = activation_from_string(l.at("activation").get<std::string>());
            p.layers.push_back(std::move(d));
        }
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::SchemaViolation, std::string("MLP shape: ") + e.what());
    }
    return p;
}

inline void
put_vec_f64(Bytes &out, const VecX &v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
}

inline VecX
read_vec_f64(ByteReader &r, std::size_t n) {
    VecX v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = r.f64();
    return v;
}

inline Bytes
encode_adam(const AdamState &a, std::size_t n) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(a.step & 0xffffffffu));
    put_u32(out, static_cast<std::uint32_t>(a.step >> 32));
    put_vec_f64(out, a.m.size() ? a.m : VecX::Zero(static_cast<Eigen::Index>(n)));
    put_vec_f64(out, a.v.size() ? a.v : VecX::Zero(static_cast<Eigen::Index>(n)));
    return out;
}

inline AdamState
decode_adam(std::span<const std::uint8_t> bytes, std::size_t n) {
    ByteReader r(bytes);
    AdamState a;
    const std::uint64_t lo = r.u32();
    const std::uint64_t hi = r.u32();
    a.step = lo | (hi << 32);
    a.m = read_vec_f64(r, n);
    a.v = read_vec_f64(r, n);
    if (a.step == 0) a.m = a.v = VecX();
    return a;
}

/// Sign pattern of every ReLU pre-activation for input batch `x`. Finite
/// differences are only meaningful when a perturbation leaves it unchanged.
inline std::vector<bool>
relu_gates(const MlpParams &p, const MatX &x) {
    const MlpCache cache = mlp_forward_batch(p, x);
    std::vector<bool> gates;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        if (p.layers[i].activation != Activation::Relu) continue;
        for (Eigen::Index k = 0; k < cache.pre[i].size(); ++k) gates.push_back(cache.pre[i].data()[k] > 0.0);
    }
    return gates;
}

/// Exponential moving average, the "smoothed" curve monotonicity is judged on.
inline std::vector<double>
smooth_curve(const std::vector<double> &curve, double beta = 0.9) {
    std::vector<double> out;
    out.reserve(curve.size());
    double ema = curve.empty() ? 0.0 : curve.front();
    for (double v : curve) {
        ema = beta * ema + (1.0 - beta) * v;
        out.push_back(ema);
    }
    return out;
}

/// Relative error used by every finite-difference check in the project:
/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero components
/// from amplifying round-off.
inline double
relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

} // namespace worldtok

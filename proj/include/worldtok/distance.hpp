// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "error.hpp"

#include <Eigen/Core>

#include <cmath>
#include <span>

namespace worldtok {

using VecX = Eigen::VectorXd;

struct DistanceOptions {
    double l2_weight = 0.1;
    double min_norm = 1e-9;
};

/// Sum over blocks of width `block_dim` of (1 - cos) plus l2_weight * squared
/// distance. Both the language-field and autoencoder reconstruction use it.
/// The cosine term is skipped (0 if both vectors vanish, 1 if one does) below
/// `min_norm`. When `grad` is non-null it receives d/d(rendered).
inline double
cosine_l2_distance(std::span<const double> rendered, std::span<const double> target, int block_dim,
                   const DistanceOptions &opts = {}, double *grad = nullptr) {
    require(rendered.size() == target.size() && rendered.size() % block_dim == 0,
            ErrorKind::DimensionMismatch, "cosine_l2_distance: width mismatch");
    double total = 0.0;
    const std::size_t levels = rendered.size() / block_dim;
    for (std::size_t l = 0; l < levels; ++l) {
        const double *f = rendered.data() + l * block_dim;
        const double *h = target.data() + l * block_dim;
        double *g = grad ? grad + l * block_dim : nullptr;
        double ff = 0.0, hh = 0.0, fh = 0.0, sq = 0.0;
        for (int k = 0; k < block_dim; ++k) {
            ff += f[k] * f[k];
            hh += h[k] * h[k];
            fh += f[k] * h[k];
            sq += (f[k] - h[k]) * (f[k] - h[k]);
        }
        const double nf = std::sqrt(ff), nh = std::sqrt(hh);
        const bool f_ok = nf >= opts.min_norm, h_ok = nh >= opts.min_norm;
        double cos_term = 0.0;
        if (f_ok && h_ok) {
            cos_term = 1.0 - fh / (nf * nh);
        } else if (f_ok != h_ok) {
            cos_term = 1.0;
        }
        total += cos_term + opts.l2_weight * sq;
        if (g) {
            for (int k = 0; k < block_dim; ++k) {
                g[k] = 2.0 * opts.l2_weight * (f[k] - h[k]);
                if (f_ok && h_ok) g[k] -= h[k] / (nf * nh) - fh * f[k] / (ff * nf * nh);
            }
        }
    }
    return total;
}

inline double
cosine_l2_distance(const VecX &rendered, const VecX &target, int block_dim,
                   const DistanceOptions &opts = {}, double *grad = nullptr) {
    return cosine_l2_distance(std::span<const double>(rendered.data(), rendered.size()),
                              std::span<const double>(target.data(), target.size()), block_dim, opts, grad);
}

} // namespace worldtok

// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Task-aware token selection: uniform + top-k for global tasks, text-query
// cross-attention for grounding. All selections are reproducible from the
// inputs and a seed.
#pragma once

#include "error.hpp"
#include "mlp.hpp"
#include "parallel.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace worldtok {

struct SamplingConfig {
    std::size_t budget = 4096;
    double uniform_fraction = 0.5;
    std::uint64_t seed = 0;
    double temperature = 1.0;

    void
    validate() const {
        require(budget >= 1, ErrorKind::InvalidArgument, "sampling budget must be >= 1");
        require(uniform_fraction >= 0.0 && uniform_fraction <= 1.0, ErrorKind::InvalidArgument,
                "uniform_fraction must be in [0, 1]");
        require(std::isfinite(temperature) && temperature > 0.0, ErrorKind::InvalidArgument,
                "temperature must be > 0");
    }
};

struct SampleResult {
    std::vector<std::size_t> indices; // ascending
    std::vector<double> scores;       // parallel to indices
    std::vector<std::size_t> ranked;  // same set in selection order
    std::string method;

    std::size_t size() const { return indices.size(); }
};

namespace detail {

inline SampleResult
finish(std::vector<std::size_t> order, const std::vector<double> &score_of, std::string method) {
    SampleResult r;
    r.ranked = order;
    std::sort(order.begin(), order.end());
    r.indices = std::move(order);
    r.scores.reserve(r.indices.size());
    for (auto i : r.indices) r.scores.push_back(score_of[i]);
    r.method = std::move(method);
    return r;
}

/// Indices ordered by descending score, ties by ascending index.
inline std::vector<std::size_t>
rank_by_score(const std::vector<double> &scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

} // namespace detail

/// First `n` steps of a Fisher-Yates shuffle over [0, available).
inline std::vector<std::size_t>
partial_shuffle(std::size_t available, std::size_t n, Rng &rng) {
    std::vector<std::size_t> pool(available);
    std::iota(pool.begin(), pool.end(), 0);
    n = std::min(n, available);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(available - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
}

/// Uniform selection without replacement; scores are the inclusion
/// probability min(N, available) / available.
inline SampleResult
uniform_sample(std::size_t available, const SamplingConfig &cfg) {
    cfg.validate();
    require(available >= 1, ErrorKind::InvalidArgument, "uniform_sample: nothing to sample");
    Rng rng(cfg.seed);
    auto order = partial_shuffle(available, cfg.budget, rng);
    const double p = static_cast<double>(order.size()) / static_cast<double>(available);
    return detail::finish(std::move(order), std::vector<double>(available, p), "uniform");
}

inline SampleResult
topk_sample(const std::vector<double> &scores, std::size_t k) {
    require(k >= 1, ErrorKind::InvalidArgument, "topk_sample: k must be >= 1");
    require(!scores.empty(), ErrorKind::InvalidArgument, "topk_sample: no scores");
    for (double s : scores) require(!std::isnan(s), ErrorKind::InvalidArgument, "topk_sample: NaN score");
    auto order = detail::rank_by_score(scores);
    order.resize(std::min(k, scores.size()));
    return detail::finish(std::move(order), scores, "topk");
}

/// floor(uniform_fraction * N) uniform picks, then the best remaining by
/// salience until min(N, available) indices are chosen.
inline SampleResult
hybrid_sample(const std::vector<double> &salience, const SamplingConfig &cfg) {
    cfg.validate();
    require(!salience.empty(), ErrorKind::InvalidArgument, "hybrid_sample: no tokens");
    const std::size_t n = salience.size();
    const std::size_t target = std::min(cfg.budget, n);
    const auto n_uniform = std::min(target, static_cast<std::size_t>(std::floor(cfg.uniform_fraction *
                                                                                 static_cast<double>(cfg.budget))));
    Rng rng(cfg.seed);
    std::vector<std::size_t> order = partial_shuffle(n, n_uniform, rng);
    std::vector<char> taken(n, 0);
    for (auto i : order) taken[i] = 1;
    for (auto i : detail::rank_by_score(salience)) {
        if (order.size() >= target) break;
        if (!taken[i]) order.push_back(i);
    }
    return detail::finish(std::move(order), salience, "hybrid");
}

inline SampleResult
hybrid_sample(const VecX &salience, const SamplingConfig &cfg) {
    return hybrid_sample(std::vector<double>(salience.data(), salience.data() + salience.size()), cfg);
}

/// Per Gaussian token (rows of `gauss`): max over query tokens (rows of
/// `query`) of softmax_i(<q, g_i> / sqrt(dim) / temperature).
inline std::vector<double>
cross_attention_scores(const MatX &gauss, const MatX &query, double temperature = 1.0, int threads = 1) {
    require(gauss.rows() >= 1 && query.rows() >= 1, ErrorKind::InvalidArgument,
            "cross_attention: empty token set or query");
    require(gauss.cols() == query.cols(), ErrorKind::DimensionMismatch,
            "cross_attention: query dim " + std::to_string(query.cols()) + " != token dim " +
                std::to_string(gauss.cols()));
    require(std::isfinite(temperature) && temperature > 0.0, ErrorKind::InvalidArgument, "temperature must be > 0");
    const double scale = 1.0 / (std::sqrt(static_cast<double>(gauss.cols())) * temperature);
    std::vector<VecX> per_query(static_cast<std::size_t>(query.rows()));
    parallel_for(per_query.size(), threads, [&](std::size_t q) {
        VecX logits = scale * (gauss * query.row(static_cast<Eigen::Index>(q)).transpose());
        logits.array() -= logits.maxCoeff();
        const VecX e = logits.array().exp();
        per_query[q] = e / e.sum();
    });
    std::vector<double> out(static_cast<std::size_t>(gauss.rows()), 0.0);
    for (const auto &a : per_query) {
        for (Eigen::Index i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] = std::max(out[static_cast<std::size_t>(i)], a[i]);
    }
    return out;
}

inline SampleResult
language_guided_sample(const MatX &gauss, const MatX &query, const SamplingConfig &cfg, int threads = 1) {
    cfg.validate();
    auto r = topk_sample(cross_attention_scores(gauss, query, cfg.temperature, threads), cfg.budget);
    r.method = "language";
    return r;
}

} // namespace worldtok

// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <worldtok/sampler.hpp>

#include <gtest/gtest.h>

#include <map>
#include <set>

using namespace worldtok;
using worldtok::testing::random_vec;

namespace {

std::vector<double>
random_scores(Rng &rng, std::size_t n) {
    std::vector<double> s(n);
    for (auto &v : s) v = rng.uniform();
    return s;
}

MatX
random_tokens(Rng &rng, int n, int dim) {
    MatX m(n, dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

void
expect_valid(const SampleResult &r, std::size_t budget, std::size_t available) {
    ASSERT_EQ(r.size(), std::min(budget, available));
    ASSERT_EQ(r.scores.size(), r.size());
    ASSERT_EQ(r.ranked.size(), r.size());
    std::set<std::size_t> uniq(r.indices.begin(), r.indices.end());
    EXPECT_EQ(uniq.size(), r.size());
    EXPECT_TRUE(std::is_sorted(r.indices.begin(), r.indices.end()));
    for (auto i : r.indices) EXPECT_LT(i, available);
}

// Two-phase reference: an explicit pool with erase for the uniform phase and a
// sorted (score, index) list for the backfill.
std::vector<std::size_t>
reference_hybrid(const std::vector<double> &sal, std::size_t budget, double fraction, std::uint64_t seed) {
    const std::size_t target = std::min(budget, sal.size());
    const auto nu = std::min(target, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(budget))));
    Rng rng(seed);
    std::vector<std::size_t> pool(sal.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    std::set<std::size_t> chosen;
    for (std::size_t i = 0; i < nu; ++i) {
        const std::size_t j = i + rng.below(pool.size() - i);
        std::swap(pool[i], pool[j]);
        chosen.insert(pool[i]);
    }
    std::vector<std::pair<double, std::size_t>> byscore;
    for (std::size_t i = 0; i < sal.size(); ++i) byscore.push_back({-sal[i], i});
    std::sort(byscore.begin(), byscore.end());
    for (const auto &[s, i] : byscore) {
        if (chosen.size() >= target) break;
        chosen.insert(i);
    }
    return {chosen.begin(), chosen.end()};
}

} // namespace

TEST(Uniform, AllWhenBudgetCoversEverything) {
    SamplingConfig cfg;
    cfg.budget = 5;
    const auto r = uniform_sample(5, cfg);
    EXPECT_EQ(r.indices, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Uniform, DeterministicForSeed) {
    SamplingConfig cfg;
    cfg.budget = 3;
    cfg.seed = 42;
    const auto a = uniform_sample(10, cfg);
    const auto b = uniform_sample(10, cfg);
    expect_valid(a, 3, 10);
    EXPECT_EQ(a.indices, b.indices);
    cfg.seed = 43;
    EXPECT_EQ(uniform_sample(10, cfg).size(), 3u);
}

TEST(Uniform, ChiSquaredAgainstUniform) {
    SamplingConfig cfg;
    cfg.budget = 1;
    std::vector<int> counts(10, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        cfg.seed = static_cast<std::uint64_t>(i);
        ++counts[uniform_sample(10, cfg).indices[0]];
    }
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - draws / 10.0) * (c - draws / 10.0) / (draws / 10.0);
    // 9 degrees of freedom, p = 0.001 critical value.
    EXPECT_LT(chi2, 27.877);
}

TEST(TopK, Examples) {
    EXPECT_EQ(topk_sample({0.9, 0.1, 0.5}, 2).indices, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(topk_sample({0.3, 0.3, 0.3, 0.3}, 2).indices, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(topk_sample({0.3, 0.7}, 10).size(), 2u);
    EXPECT_THROW(topk_sample({0.3}, 0), Error);
}

TEST(TopK, MatchesFullSortOracle) {
    Rng rng(1);
    const auto s = random_scores(rng, 1000);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < s.size(); ++i) all.push_back({-s[i], i});
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect;
    for (int i = 0; i < 50; ++i) expect.push_back(all[i].second);
    const auto r = topk_sample(s, 50);
    EXPECT_EQ(r.ranked, expect);
    std::sort(expect.begin(), expect.end());
    EXPECT_EQ(r.indices, expect);
}

TEST(Hybrid, IdentityWhenBudgetExceedsTokens) {
    Rng rng(2);
    const auto s = random_scores(rng, 30);
    SamplingConfig cfg;
    const auto r = hybrid_sample(s, cfg);
    expect_valid(r, cfg.budget, 30);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(r.indices[i], i);
}

TEST(Hybrid, ZeroFractionIsTopK) {
    Rng rng(3);
    const auto s = random_scores(rng, 200);
    SamplingConfig cfg;
    cfg.budget = 17;
    cfg.uniform_fraction = 0.0;
    EXPECT_EQ(hybrid_sample(s, cfg).indices, topk_sample(s, 17).indices);
}

TEST(Hybrid, MatchesTwoPhaseReference) {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        const auto s = random_scores(rng, 300);
        SamplingConfig cfg;
        cfg.budget = 1 + rng.below(299);
        cfg.uniform_fraction = t == 0 ? 1.0 : 0.5;
        cfg.seed = 1000 + static_cast<std::uint64_t>(t);
        const auto r = hybrid_sample(s, cfg);
        expect_valid(r, cfg.budget, 300);
        EXPECT_EQ(r.indices, reference_hybrid(s, cfg.budget, cfg.uniform_fraction, cfg.seed));
    }
}

TEST(Hybrid, BudgetContract) {
    Rng rng(5);
    for (std::size_t avail : {1u, 5u, 100u, 5000u}) {
        const auto s = random_scores(rng, avail);
        for (std::size_t n : {1u, 7u, 4096u}) {
            SamplingConfig cfg;
            cfg.budget = n;
            expect_valid(hybrid_sample(s, cfg), n, avail);
        }
    }
}

TEST(Hybrid, RejectsBadConfig) {
    SamplingConfig cfg;
    cfg.uniform_fraction = 1.5;
    EXPECT_THROW(hybrid_sample(std::vector<double>{0.5}, cfg), Error);
    cfg = {};
    cfg.budget = 0;
    EXPECT_THROW(hybrid_sample(std::vector<double>{0.5}, cfg), Error);
    EXPECT_THROW(hybrid_sample(std::vector<double>{}, SamplingConfig{}), Error);
}

TEST(CrossAttention, SaturatesOnMatchingToken) {
    MatX g = MatX::Zero(4, 4);
    for (int i = 0; i < 4; ++i) g(i, i) = 4.0;
    const MatX q = g.row(2);
    const auto s = cross_attention_scores(g, q, 0.01);
    EXPECT_NEAR(s[2], 1.0, 1e-12);
}

TEST(CrossAttention, IdenticalTokensShareEvenly) {
    Rng rng(6);
    const VecX v = random_vec(rng, 8);
    MatX g(5, 8);
    for (int i = 0; i < 5; ++i) g.row(i) = v.transpose();
    const auto s = cross_attention_scores(g, random_tokens(rng, 3, 8));
    for (double x : s) EXPECT_NEAR(x, 0.2, 1e-12);
}

TEST(CrossAttention, MatchesDirectSoftmax) {
    Rng rng(7);
    const MatX g = random_tokens(rng, 40, 16), q = random_tokens(rng, 3, 16);
    const double temp = 0.7;
    const auto s = cross_attention_scores(g, q, temp, 2);
    std::vector<double> expect(40, 0.0);
    for (int j = 0; j < 3; ++j) {
        std::vector<double> e(40);
        double z = 0.0;
        for (int i = 0; i < 40; ++i) {
            double dot = 0.0;
            for (int k = 0; k < 16; ++k) dot += q(j, k) * g(i, k);
            e[i] = std::exp(dot / 4.0 / temp);
            z += e[i];
        }
        double total = 0.0;
        for (int i = 0; i < 40; ++i) {
            expect[i] = std::max(expect[i], e[i] / z);
            total += e[i] / z;
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
    for (int i = 0; i < 40; ++i) EXPECT_NEAR(s[i], expect[i], 1e-9);
    EXPECT_THROW(cross_attention_scores(g, random_tokens(rng, 1, 15)), Error);
}

TEST(LanguageGuided, PlantedTokenRanksFirst) {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        MatX g = random_tokens(rng, 64, 32);
        const auto planted = static_cast<Eigen::Index>(rng.below(64));
        const MatX q = 3.0 * g.row(planted);
        SamplingConfig cfg;
        cfg.budget = 8;
        cfg.temperature = 0.01;
        const auto r = language_guided_sample(g, q, cfg);
        expect_valid(r, 8, 64);
        EXPECT_EQ(r.ranked.front(), static_cast<std::size_t>(planted));
    }
}

TEST(LanguageGuided, IdenticalTokensTakeFirstIndices) {
    MatX g = MatX::Ones(10, 4);
    SamplingConfig cfg;
    cfg.budget = 3;
    EXPECT_EQ(language_guided_sample(g, MatX::Ones(1, 4), cfg).indices, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(LanguageGuided, MatchesScoreThenSortAndTemperatureInvariance) {
    Rng rng(9);
    for (int t = 0; t < 10; ++t) {
        const MatX g = random_tokens(rng, 50, 8), q = random_tokens(rng, 1, 8);
        SamplingConfig cfg;
        cfg.budget = 10;
        const auto base = language_guided_sample(g, q, cfg);
        EXPECT_EQ(base.ranked, topk_sample(cross_attention_scores(g, q), 10).ranked);
        for (double temp : {0.05, 0.3, 4.0}) {
            cfg.temperature = temp;
            EXPECT_EQ(language_guided_sample(g, q, cfg).ranked, base.ranked);
        }
    }
}

TEST(LanguageGuided, PermutationEquivariant) {
    Rng rng(10);
    const MatX g = random_tokens(rng, 30, 8), q = random_tokens(rng, 2, 8);
    std::vector<Eigen::Index> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 29; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    const MatX gp = g(perm, Eigen::all);
    SamplingConfig cfg;
    cfg.budget = 6;
    const auto a = language_guided_sample(g, q, cfg);
    const auto b = language_guided_sample(gp, q, cfg);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(static_cast<std::size_t>(perm[b.ranked[k]]), a.ranked[k]);
}

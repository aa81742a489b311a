// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <worldtok/tokenizer.hpp>

#include <gtest/gtest.h>

#include <numeric>

using namespace worldtok;
using worldtok::testing::loop_forward;
using worldtok::testing::random_scene;
using worldtok::testing::random_vec;
using worldtok::testing::temp_dir;

namespace {

// Small widths keep finite differences cheap.
struct SmallSetup {
    AutoencoderModel ae;
    ProjectorParams proj;
};

SmallSetup
small_setup(std::uint64_t seed, int token_dim = 6, int hidden = 5, int feature_dim = 8) {
    SmallSetup s;
    s.ae = make_autoencoder("s", seed, {feature_dim, 4, 3});
    s.proj = make_projector(seed + 100, token_dim, hidden, feature_dim, FourierConfig{3, 2.0});
    Rng rng(seed);
    for (auto &h : s.proj.heads) {
        for (auto &l : h.layers) {
            for (Eigen::Index i = 0; i < l.biases.size(); ++i) l.biases[i] = rng.uniform(-0.5, 0.5);
        }
    }
    for (int p = 0; p < kNumHeads; ++p) s.proj.fusion_logits[p] = rng.uniform(-1.0, 1.0);
    return s;
}

void
zero_heads(ProjectorParams &proj) {
    for (auto &h : proj.heads) h.unflatten(VecX::Zero(static_cast<Eigen::Index>(h.parameter_count())));
}

GaussianPrimitive
random_primitive(Rng &rng) {
    GaussianPrimitive p;
    p.position = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 4));
    p.opacity_logit = rng.uniform(-2, 2);
    p.log_scale = Vec3(rng.uniform(-3, -1), rng.uniform(-3, -1), rng.uniform(-3, -1));
    p.rotation = worldtok::testing::random_rotation(rng);
    p.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    p.lang_latent = random_vec(rng, 3);
    return p;
}

} // namespace

TEST(Fourier, ZeroInput) {
    const VecX e = fourier_embed(Vec3::Zero());
    ASSERT_EQ(e.size(), 60);
    for (Eigen::Index i = 0; i < e.size(); i += 2) {
        EXPECT_EQ(e[i], 0.0);
        EXPECT_EQ(e[i + 1], 1.0);
    }
}

TEST(Fourier, FirstBandAtOne) {
    const VecX e = fourier_embed(Vec3(1, 0, 0));
    EXPECT_NEAR(e[0], 0.0, 1e-12);
    EXPECT_NEAR(e[1], -1.0, 1e-12);
}

TEST(Fourier, MatchesScalarOracleAndIsBounded) {
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const Vec3 x(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
        const VecX e = fourier_embed(x);
        for (int c = 0; c < 3; ++c) {
            for (int k = 0; k < 10; ++k) {
                const double arg = std::ldexp(M_PI * x[c], k);
                EXPECT_NEAR(e[c * 20 + 2 * k], std::sin(arg), 1e-12);
                EXPECT_NEAR(e[c * 20 + 2 * k + 1], std::cos(arg), 1e-12);
            }
        }
        EXPECT_LE(e.cwiseAbs().maxCoeff(), 1.0);
    }
}

TEST(Fourier, SinBandPeriod) {
    Rng rng(2);
    for (int k = 0; k < 10; ++k) {
        const double x = rng.uniform(-1, 1);
        const double period = std::ldexp(1.0, 1 - k);
        const VecX a = fourier_embed(Vec3(x, 0, 0));
        const VecX b = fourier_embed(Vec3(x + period, 0, 0));
        EXPECT_NEAR(a[2 * k], b[2 * k], 1e-9);
    }
}

TEST(Fourier, RejectsBadConfig) {
    EXPECT_THROW(fourier_embed(Vec3::Zero(), FourierConfig{0, 2.0}), Error);
}

TEST(Projector, FusionWeightsAreASoftmax) {
    Rng rng(3);
    ProjectorParams p = make_projector(1, 4, 3);
    for (int t = 0; t < 20; ++t) {
        for (int i = 0; i < kNumHeads; ++i) p.fusion_logits[i] = rng.uniform(-30, 30);
        const VecX a = p.fusion_weights();
        EXPECT_NEAR(a.sum(), 1.0, 1e-12);
        EXPECT_GT(a.minCoeff(), 0.0);
    }
}

TEST(Projector, ZeroHeadsGiveZeroToken) {
    auto s = small_setup(4);
    zero_heads(s.proj);
    Rng rng(4);
    for (int t = 0; t < 5; ++t) {
        const auto tok = tokenize_gaussian(random_primitive(rng), s.proj, s.ae);
        EXPECT_EQ(tok.values, VecX::Zero(6));
    }
}

TEST(Projector, SaturatedFusionPicksPositionHead) {
    auto s = small_setup(5);
    s.proj.fusion_logits << 20, -20, -20, -20, -20;
    Rng rng(5);
    const auto prim = random_primitive(rng);
    const VecX expect = mlp_forward(s.proj.heads[kHeadPosition], fourier_embed(prim.position, s.proj.fourier));
    EXPECT_LT((tokenize_gaussian(prim, s.proj, s.ae).values - expect).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Projector, MatchesHandAssembledPipeline) {
    Rng rng(6);
    for (int t = 0; t < 10; ++t) {
        auto s = small_setup(10 + t);
        const auto prim = random_primitive(rng);
        // Inputs rebuilt term by term.
        std::vector<double> px;
        for (int c = 0; c < 3; ++c) {
            for (int k = 0; k < 3; ++k) {
                px.push_back(std::sin(std::ldexp(M_PI * prim.position[c], k)));
                px.push_back(std::cos(std::ldexp(M_PI * prim.position[c], k)));
            }
        }
        const VecX x = Eigen::Map<VecX>(px.data(), 18);
        const VecX o = VecX::Constant(1, 1.0 / (1.0 + std::exp(-prim.opacity_logit)));
        const VecX sc = prim.log_scale.array().exp();
        VecX r(4);
        r << prim.rotation.x(), prim.rotation.y(), prim.rotation.z(), prim.rotation.w();
        const VecX f = loop_forward(s.ae.decoder, prim.lang_latent);
        const std::array<VecX, 5> in = {x, o, sc, r, f};
        double z = 0.0;
        for (int p = 0; p < 5; ++p) z += std::exp(s.proj.fusion_logits[p]);
        VecX expect = VecX::Zero(6);
        for (int p = 0; p < 5; ++p) {
            expect += std::exp(s.proj.fusion_logits[p]) / z * loop_forward(s.proj.heads[p], in[p]);
        }
        EXPECT_LT((tokenize_gaussian(prim, s.proj, s.ae).values - expect).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Projector, TokenLiesInHeadEnvelope) {
    Rng rng(7);
    auto s = small_setup(7);
    for (int t = 0; t < 20; ++t) {
        const auto prim = random_primitive(rng);
        const HeadInputs in = head_inputs(prim, s.ae, s.proj.fourier);
        MatX h(6, kNumHeads);
        for (int p = 0; p < kNumHeads; ++p) h.col(p) = mlp_forward(s.proj.heads[p], in[p]);
        const VecX tok = tokenize_gaussian(prim, s.proj, s.ae).values;
        for (int i = 0; i < 6; ++i) {
            EXPECT_GE(tok[i], h.row(i).minCoeff() - 1e-12);
            EXPECT_LE(tok[i], h.row(i).maxCoeff() + 1e-12);
        }
    }
}

TEST(Projector, DimensionErrors) {
    auto s = small_setup(8);
    Rng rng(8);
    auto prim = random_primitive(rng);
    prim.lang_latent = VecX::Zero(4);
    EXPECT_THROW(tokenize_gaussian(prim, s.proj, s.ae), Error);
    const auto wide = make_autoencoder("w", 1, {16, 3});
    EXPECT_THROW(tokenize_gaussian(random_primitive(rng), s.proj, wide), Error);
    ProjectorParams bad = s.proj;
    bad.heads[kHeadScale] = make_mlp({2, 5, 6}, 1);
    EXPECT_THROW(bad.validate(), Error);
}

TEST(TokenizeScene, SingletonAndPermutation) {
    Rng rng(9);
    auto s = small_setup(9);
    const auto scene = random_scene(rng, 8);
    const auto one = GaussianScene("one", {scene.primitives()[3]});
    const auto single = tokenize_scene(one, s.proj, s.ae);
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(single[0].values, tokenize_gaussian(scene.primitives()[3], s.proj, s.ae).values);

    std::vector<std::size_t> perm(scene.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[1], perm[5]);
    std::vector<GaussianPrimitive> shuffled;
    for (auto i : perm) shuffled.push_back(scene.primitives()[i]);
    const auto a = tokenize_scene(scene, s.proj, s.ae);
    const auto b = tokenize_scene(scene.with_primitives(shuffled), s.proj, s.ae);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        EXPECT_EQ(b[i].values, a[perm[i]].values);
        EXPECT_EQ(b[i].source_index, i);
    }
}

TEST(TokenizeScene, ThreadInvariantAtDefaultWidths) {
    Rng rng(10);
    const auto scene = random_scene(rng, 100);
    const auto ae = make_autoencoder("t", 3);
    const auto proj = make_projector(4);
    const auto a = tokenize_scene(scene, proj, ae, 1);
    const auto b = tokenize_scene(scene, proj, ae, 4);
    ASSERT_EQ(a.size(), 100u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].values.size(), 256);
        EXPECT_EQ(a[i].values, b[i].values);
    }
}

TEST(TokenizeScene, MultiLevelLatentsUseFirstBlock) {
    Rng rng(11);
    auto s = small_setup(11);
    const auto scene = random_scene(rng, 4, 3, 3);
    const auto toks = tokenize_scene(scene, s.proj, s.ae);
    auto prim = scene.primitives()[2];
    prim.lang_latent = VecX(prim.lang_latent.head(3));
    EXPECT_EQ(toks[2].values, tokenize_gaussian(prim, s.proj, s.ae).values);
    const auto wrong = random_scene(rng, 4, 4, 1);
    EXPECT_THROW(tokenize_scene(wrong, s.proj, s.ae), Error);
}

TEST(ProjectorGradient, ZeroParamsHaveZeroFusionGradient) {
    auto s = small_setup(12);
    zero_heads(s.proj);
    Rng rng(12);
    const auto prim = random_primitive(rng);
    ProjectorBatch b;
    const auto in = head_inputs(prim, s.ae, s.proj.fourier);
    for (int p = 0; p < kNumHeads; ++p) b.inputs[p] = in[p];
    VecX grad;
    projector_loss(s.proj, b, MatX(random_vec(rng, 6)), &grad);
    EXPECT_EQ(grad.tail(kNumHeads), VecX::Zero(kNumHeads));
    EXPECT_LT(projector_gradient_check(s.proj, s.ae, prim, random_vec(rng, 6)), 1e-4);
}

TEST(ProjectorGradient, SaturatedAndRandomCases) {
    Rng rng(13);
    for (int t = 0; t < 10; ++t) {
        auto s = small_setup(20 + t);
        const auto prim = random_primitive(rng);
        EXPECT_LT(projector_gradient_check(s.proj, s.ae, prim, random_vec(rng, 6)), 1e-4);
        s.proj.fusion_logits << -20, -20, 20, -20, -20;
        EXPECT_LT(projector_gradient_check(s.proj, s.ae, prim, random_vec(rng, 6)), 1e-4);
    }
}

TEST(ProjectorTraining, LossDecreasesAndResumes) {
    Rng rng(14);
    auto s = small_setup(14);
    const auto scene = random_scene(rng, 12);
    const auto data = make_projector_batch(scene, s.ae, s.proj.fourier);
    MatX targets(6, 12);
    for (Eigen::Index i = 0; i < targets.size(); ++i) targets.data()[i] = rng.normal();
    ProjectorTrainOptions opts;
    opts.iters = 300;
    opts.lr = 1e-2;
    opts.batch = 4;
    opts.seed = 3;
    const auto full = train_projector(s.proj, data, targets, opts);
    const auto smooth = smooth_curve(full.loss_curve);
    EXPECT_LT(smooth.back(), 0.8 * smooth.front());

    opts.iters = 100;
    const auto first = train_projector(s.proj, data, targets, opts);
    const auto dir = temp_dir("proj_resume");
    save_projector(first.params, dir / "p.gsdw", &first.state);
    ProjectorTrainState state;
    const auto loaded = load_projector(dir / "p.gsdw", &state);
    EXPECT_EQ(loaded.flatten(), first.params.flatten());
    opts.iters = 200;
    const auto second = train_projector(loaded, data, targets, opts, state);
    EXPECT_EQ(second.params.flatten(), full.params.flatten());
}

TEST(TokenDump, RoundTripsAtFloatPrecision) {
    Rng rng(15);
    auto s = small_setup(15);
    const auto scene = random_scene(rng, 9);
    const auto set = make_token_set(scene, tokenize_scene(scene, s.proj, s.ae));
    const auto dir = temp_dir("gtok");
    save_tokens(set, dir / "t.gsdw");
    const auto back = load_tokens(dir / "t.gsdw");
    EXPECT_EQ(back.scene_id, scene.scene_id());
    EXPECT_EQ(back.source_hash, fnv1a64(encode_scene(scene)));
    ASSERT_EQ(back.tokens.rows(), 9);
    ASSERT_EQ(back.tokens.cols(), 6);
    for (Eigen::Index i = 0; i < set.tokens.size(); ++i) {
        EXPECT_EQ(back.tokens.data()[i], static_cast<double>(static_cast<float>(set.tokens.data()[i])));
    }
    for (Eigen::Index i = 0; i < 9; ++i) {
        EXPECT_FLOAT_EQ(back.salience[i], scene.primitives()[static_cast<std::size_t>(i)].opacity());
    }
    save_tokens(back, dir / "t2.gsdw");
    EXPECT_EQ(read_file(dir / "t.gsdw"), read_file(dir / "t2.gsdw"));
    save_projector(s.proj, dir / "p.gsdw");
    EXPECT_THROW(load_tokens(dir / "p.gsdw"), Error);
}

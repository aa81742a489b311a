// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <worldtok/genmath.hpp>

#include <gtest/gtest.h>

using namespace worldtok;
using worldtok::testing::temp_dir;

namespace {

Grid
random_grid(Rng &rng, int h, int w, int c) {
    return gaussian_noise(h, w, c, rng);
}

// Two smooth samples with a fully populated condition (C_I = clean image).
std::vector<DenoiserSample>
toy_dataset(int context_dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<DenoiserSample> data;
    for (int s = 0; s < 2; ++s) {
        DenoiserSample d;
        d.clean = Grid(8, 8, 3);
        d.condition = SparseConditionMap(8, 8);
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                for (int c = 0; c < 3; ++c) {
                    d.clean.at(y, x, c) = std::sin(0.5 * x + s + c) * std::cos(0.3 * y - c);
                    d.condition.rgb.at(y, x, c) = d.clean.at(y, x, c);
                }
                d.condition.depth.at(y, x) = 2.0 + 0.1 * x;
                d.condition.mask.at(y, x) = 1.0;
            }
        }
        if (context_dim > 0) {
            MatX img(3, context_dim), txt(2, context_dim);
            for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.normal();
            for (Eigen::Index i = 0; i < txt.size(); ++i) txt.data()[i] = rng.normal();
            d.context = assemble_condition_sequence(img, txt, TypeEmbeddings::random(context_dim, seed));
        }
        data.push_back(std::move(d));
    }
    return data;
}

} // namespace

TEST(PseudoRgb, ReplicationAndMean) {
    Grid d(4, 5, 1, 0.5);
    const Grid rgb = depth_to_pseudo_rgb(d);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 5; ++x) {
            for (int c = 0; c < 3; ++c) EXPECT_EQ(rgb.at(y, x, c), 0.5);
        }
    }
    Grid mix(1, 1, 3);
    mix.at(0, 0, 1) = 0.3;
    mix.at(0, 0, 2) = 0.6;
    EXPECT_NEAR(pseudo_rgb_to_depth(mix).at(0, 0), 0.3, 1e-15);
}

TEST(PseudoRgb, ExactInverseAndMeanOracle) {
    Rng rng(1);
    const Grid d = random_grid(rng, 9, 7, 1);
    EXPECT_EQ(pseudo_rgb_to_depth(depth_to_pseudo_rgb(d)), d);
    const Grid rgb = random_grid(rng, 9, 7, 3);
    const Grid m = pseudo_rgb_to_depth(rgb);
    for (int y = 0; y < 9; ++y) {
        for (int x = 0; x < 7; ++x) {
            EXPECT_NEAR(m.at(y, x), (rgb.at(y, x, 0) + rgb.at(y, x, 1) + rgb.at(y, x, 2)) / 3.0, 1e-12);
        }
    }
    EXPECT_THROW(pseudo_rgb_to_depth(d), Error);
}

TEST(Schedule, BoundariesAndIdentity) {
    for (auto family : {ScheduleFamily::Cosine, ScheduleFamily::Linear}) {
        const auto s = make_schedule(1000, family);
        EXPECT_EQ(s.alpha[0], 1.0);
        EXPECT_EQ(s.sigma[0], 0.0);
        for (int t = 0; t <= 1000; ++t) {
            EXPECT_NEAR(s.alpha[t] * s.alpha[t] + s.sigma[t] * s.sigma[t], 1.0, 1e-12);
            if (t > 0) {
                EXPECT_LE(s.alpha[t], s.alpha[t - 1]);
            }
        }
    }
    const auto c = make_schedule(10);
    EXPECT_EQ(c.alpha[10], 0.0);
    EXPECT_EQ(c.sigma[10], 1.0);
    EXPECT_THROW(make_schedule(1), Error);
    EXPECT_THROW(c.check_step(11), Error);
}

TEST(Noise, BoundaryStepsAndFormula) {
    Rng rng(2);
    const auto s = make_schedule(50);
    const Grid d = random_grid(rng, 5, 6, 3), e = random_grid(rng, 5, 6, 3);
    EXPECT_EQ(add_noise(d, e, s, 0), d);
    EXPECT_EQ(add_noise(d, e, s, 50), e);
    const Grid dt = add_noise(d, e, s, 17);
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_NEAR(dt.data()[i], s.alpha[17] * d.data()[i] + s.sigma[17] * e.data()[i], 1e-15);
    }
    EXPECT_THROW(add_noise(d, random_grid(rng, 5, 6, 1), s, 3), Error);
}

TEST(VTarget, ExamplesAndVariants) {
    const auto s = make_schedule(20);
    Rng rng(3);
    const Grid d = random_grid(rng, 3, 3, 2), e = random_grid(rng, 3, 3, 2);
    EXPECT_EQ(v_target(d, e, s, 0), e);

    NoiseSchedule custom;
    custom.steps = 1;
    custom.alpha = {1.0, 0.6};
    custom.sigma = {0.0, 0.8};
    const Grid v = v_target(Grid(2, 2, 1, 0.5), Grid(2, 2, 1, 1.0), custom, 1);
    for (double x : v.data()) EXPECT_NEAR(x, 0.2, 1e-15);

    const Grid dt = add_noise(d, e, s, 7);
    const Grid literal = v_target_noisy(dt, e, s, 7);
    EXPECT_NEAR(literal.at(1, 1, 0), s.alpha[7] * e.at(1, 1, 0) - s.sigma[7] * dt.at(1, 1, 0), 1e-15);
}

TEST(VTarget, ReconstructionIdentities) {
    Rng rng(4);
    const auto s = make_schedule(1000);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const int t = static_cast<int>(rng.below(1001));
        const Grid d = random_grid(rng, 2, 3, 3), e = random_grid(rng, 2, 3, 3);
        const Grid dt = add_noise(d, e, s, t);
        const Grid v = v_target(d, e, s, t);
        worst = std::max({worst, max_abs_diff(recover_clean(dt, v, s, t), d), max_abs_diff(recover_noise(dt, v, s, t), e)});
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(VLoss, Examples) {
    Rng rng(5);
    const Grid a = random_grid(rng, 4, 4, 3);
    EXPECT_EQ(v_loss(a, a), 0.0);
    Grid b = a;
    for (double &x : b.data()) x += 0.25;
    EXPECT_NEAR(v_loss(b, a), 0.0625, 1e-15);
    const Grid c = random_grid(rng, 4, 4, 3);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::pow(a.data()[i] - c.data()[i], 2);
    EXPECT_NEAR(v_loss(a, c), acc / 48.0, 1e-12);
    EXPECT_THROW(v_loss(a, Grid(4, 4, 1)), Error);
}

TEST(ConditionSequence, ConcatAndTypeEmbeddings) {
    Rng rng(6);
    MatX img(3, 4), txt(2, 4);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < txt.size(); ++i) txt.data()[i] = rng.normal();
    const auto types = TypeEmbeddings::random(4, 9, 1.0);

    const MatX only_img = assemble_condition_sequence(img, MatX(0, 4), types);
    ASSERT_EQ(only_img.rows(), 3);
    EXPECT_EQ(only_img.row(1), img.row(1) + types.visual.transpose());

    MatX plain(5, 4);
    plain << img, txt;
    EXPECT_EQ(assemble_condition_sequence(img, txt, TypeEmbeddings::zeros(4)), plain);

    const MatX seq = assemble_condition_sequence(img, txt, types);
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 4; ++c) {
            const double expect = r < 3 ? img(r, c) + types.visual[c] : txt(r - 3, c) + types.textual[c];
            EXPECT_EQ(seq(r, c), expect);
        }
    }
    EXPECT_THROW(assemble_condition_sequence(img, MatX::Zero(1, 3), types), Error);
}

TEST(ToyDenoiser, GradientCheck) {
    for (int seed = 0; seed < 10; ++seed) {
        const auto data = toy_dataset(seed % 2 ? 6 : 0, 10 + seed);
        auto model = make_toy_denoiser(3, seed % 2 ? 6 : 0, 20 + seed, {7, 5});
        Rng rng(static_cast<std::uint64_t>(seed));
        for (auto &l : model.net.layers) {
            for (Eigen::Index i = 0; i < l.biases.size(); ++i) l.biases[i] = rng.uniform(-0.3, 0.3);
        }
        const auto s = make_schedule(100);
        const Grid eps = gaussian_noise(8, 8, 3, rng);
        const int t = 1 + static_cast<int>(rng.below(100));
        const Grid dt = add_noise(data[0].clean, eps, s, t);
        const MatX in = denoiser_inputs(model, dt, data[0], t, 100);
        const MatX target = grid_columns(v_target(data[0].clean, eps, s, t));
        EXPECT_LT(denoiser_gradient_check(model, in, target), 1e-4) << "seed " << seed;
    }
}

TEST(ToyDenoiser, DegenerateZeroTarget) {
    auto data = toy_dataset(0, 1);
    for (auto &d : data) d.clean = Grid(8, 8, 3);
    const auto s = make_schedule(100);
    DenoiserTrainOptions opts;
    opts.iters = 1500;
    opts.fixed_t = 100;
    const auto res = train_toy_denoiser(make_toy_denoiser(3, 0, 2), data, s, opts);
    EXPECT_LT(smooth_curve(res.loss_curve).back(), 1e-3 * res.loss_curve.front());
}

TEST(ToyDenoiser, SingleTimestepFits) {
    auto data = toy_dataset(0, 2);
    data.resize(1);
    const auto s = make_schedule(1000);
    DenoiserTrainOptions opts;
    opts.fixed_t = 400;
    opts.seed = 5;
    const auto init = make_toy_denoiser(3, 0, 3);
    const double before = denoiser_eval_loss(init, data, s, opts, 50, 77);
    const auto res = train_toy_denoiser(init, data, s, opts);
    EXPECT_LT(denoiser_eval_loss(res.model, data, s, opts, 50, 77), 0.1 * before);
}

TEST(ToyDenoiser, ContextChangesPrediction) {
    const auto data = toy_dataset(4, 3);
    const auto model = make_toy_denoiser(3, 4, 4);
    DenoiserSample without = data[0];
    without.context = MatX();
    const Grid dt = data[0].clean;
    EXPECT_NE(denoiser_predict(model, dt, data[0], 10, 100), denoiser_predict(model, dt, without, 10, 100));
    DenoiserSample wrong = data[0];
    wrong.context = MatX::Zero(2, 5);
    EXPECT_THROW(denoiser_predict(model, dt, wrong, 10, 100), Error);
}

TEST(ToyDenoiser, ResumeCheckpointAndDivergence) {
    const auto data = toy_dataset(4, 4);
    const auto s = make_schedule(200);
    const auto init = make_toy_denoiser(3, 4, 6, {8});
    DenoiserTrainOptions opts;
    opts.seed = 11;
    opts.iters = 40;
    const auto full = train_toy_denoiser(init, data, s, opts);
    opts.iters = 15;
    const auto first = train_toy_denoiser(init, data, s, opts);
    const auto dir = temp_dir("dnsr");
    save_denoiser(first.model, dir / "d.gsdw", &first.state);
    DenoiserTrainState state;
    const auto loaded = load_denoiser(dir / "d.gsdw", &state);
    EXPECT_EQ(state.iteration, 15u);
    opts.iters = 25;
    const auto second = train_toy_denoiser(loaded, data, s, opts, state);
    EXPECT_EQ(second.model.net.flatten(), full.model.net.flatten());

    opts.lr = 1e6;
    opts.iters = 200;
    try {
        train_toy_denoiser(init, data, s, opts);
        FAIL() << "expected divergence";
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::NumericFailure);
    }
    EXPECT_THROW(train_toy_denoiser(init, {}, s, {}), Error);
}

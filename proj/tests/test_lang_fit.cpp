// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <worldtok/lang_fit.hpp>

#include <gtest/gtest.h>

using namespace worldtok;
using worldtok::testing::central_difference;
using worldtok::testing::random_scene;
using worldtok::testing::test_camera;

namespace {

std::vector<CameraModel>
orbit_cameras(int count, int size = 24) {
    std::vector<CameraModel> cams;
    for (int i = 0; i < count; ++i) {
        CameraModel cam = test_camera(size, size, 25.0);
        const double angle = 0.15 * (i - count / 2);
        cam.world_from_camera.rotation = UnitQuaternion::from_axis_angle(Vec3::UnitY(), angle);
        cam.world_from_camera.translation = Vec3(3.5 * std::sin(-angle), 0.0, 3.5 - 3.5 * std::cos(angle));
        cams.push_back(cam);
    }
    return cams;
}

std::vector<Grid>
render_targets(const GaussianScene &scene, const std::vector<CameraModel> &cams) {
    std::vector<Grid> out;
    for (const auto &c : cams) out.push_back(render(scene, c).lang);
    return out;
}

} // namespace

TEST(LangDistance, GradientMatchesFiniteDifferences) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        VecX f(9), h(9);
        for (int k = 0; k < 9; ++k) {
            f[k] = rng.normal();
            h[k] = rng.normal();
        }
        VecX g(9);
        lang_distance(f, h, 3, {}, g.data());
        auto fn = [&](const VecX &x) { return lang_distance(x, h, 3); };
        for (int k = 0; k < 9; ++k) EXPECT_LT(relative_error(g[k], central_difference(fn, f, k)), 1e-6);
    }
}

TEST(LangDistance, ZeroForIdenticalAndSumsLevels) {
    VecX f(6);
    f << 1, 2, 3, -1, 0, 2;
    EXPECT_NEAR(lang_distance(f, f, 3), 0.0, 1e-15);
    VecX h = f;
    h.tail(3) = -f.tail(3); // second level anti-parallel: 1 - cos = 2
    const double sq = (f.tail(3) - h.tail(3)).squaredNorm();
    EXPECT_NEAR(lang_distance(f, h, 3), 2.0 + 0.1 * sq, 1e-12);
}

TEST(LangFit, SelfRenderedTargetsAreAFixedPoint) {
    Rng rng(10);
    const auto scene = random_scene(rng, 12);
    const auto cams = orbit_cameras(3);
    const auto targets = render_targets(scene, cams);
    LangFitOptions opts;
    opts.iters = 20;
    const auto res = fit_language_field(scene, cams, targets, opts);
    const VecX before = flatten_latents(scene);
    const VecX after = flatten_latents(res.scene);
    EXPECT_LT((before - after).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(res.final_loss, 1e-12);
}

TEST(LangFit, SingleSplatSinglePixelConverges) {
    CameraModel cam = test_camera(1, 1, 10.0);
    cam.cx = cam.cy = 0.0;
    GaussianPrimitive p;
    p.position = {0, 0, 2};
    p.log_scale = Vec3::Constant(std::log(0.5));
    p.opacity_logit = std::log(0.9 / 0.1);
    p.lang_latent = VecX::Zero(3);
    const GaussianScene scene("one", {p});
    const double w = render_weights(scene, cam).at(0, 0).at(0).weight;
    ASSERT_NEAR(w, 0.9, 1e-12);
    VecX g(3);
    g << 0.3, -0.7, 1.1;
    Grid target(1, 1, 3);
    for (int k = 0; k < 3; ++k) target.at(0, 0, k) = w * g[k];
    LangFitOptions opts;
    opts.iters = 3000;
    opts.lr = 0.02;
    const auto res = fit_language_field(scene, {cam}, {target}, opts);
    const VecX got = res.scene.primitives()[0].lang_latent;
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(got[k], g[k], 1e-4);
}

TEST(LangFit, GradientMatchesFiniteDifferences) {
    Rng rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        const auto scene = random_scene(rng, 5, 3, trial % 2 ? 3 : 1, 0.3);
        const auto cams = orbit_cameras(2, 16);
        // Targets from a different latent assignment so the gradient is nonzero.
        const auto hidden = random_scene(rng, 5, 3, scene.lang_levels(), 0.3);
        std::vector<VecX> lat;
        for (const auto &p : hidden.primitives()) lat.push_back(p.lang_latent);
        const auto targets = render_targets(scene.with_latents(lat), cams);
        EXPECT_LT(lang_field_gradient_check(scene, cams, targets), 1e-3);
    }
}

TEST(LangFit, LossDecreasesAndRecoversHiddenLatents) {
    Rng rng(77);
    const auto scene = random_scene(rng, 20);
    const auto cams = orbit_cameras(4);
    std::vector<VecX> hidden;
    for (std::size_t i = 0; i < scene.size(); ++i) hidden.push_back(VecX::Random(3));
    const auto targets = render_targets(scene.with_latents(hidden), cams);
    LangFitOptions opts;
    opts.iters = 500;
    const auto res = fit_language_field(scene, cams, targets, opts);
    const auto smooth = smooth_curve(res.loss_curve);
    EXPECT_LT(smooth.back(), 0.05 * smooth.front());
    EXPECT_LT(res.final_loss, res.loss_curve.front());
}

TEST(LangFit, Errors) {
    Rng rng(1);
    const auto scene = random_scene(rng, 3);
    const auto cam = test_camera();
    EXPECT_THROW(fit_language_field(scene, {}, {}), Error);
    EXPECT_THROW(fit_language_field(scene, {cam}, {Grid(8, 8, 3)}), Error);
    EXPECT_THROW(fit_language_field(scene, {cam}, {Grid(32, 32, 4)}), Error);
}

// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// Small end-to-end run: synthesize a scene, distill language latents from
// rendered targets, tokenize it and pick a token budget.
//
//   scene_to_tokens [output-dir]

#include <worldtok/autoencoder.hpp>
#include <worldtok/lang_fit.hpp>
#include <worldtok/png.hpp>
#include <worldtok/render.hpp>
#include <worldtok/sampler.hpp>
#include <worldtok/tokenizer.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace worldtok;

namespace {

GaussianScene
make_scene(Rng &rng, int count) {
    std::vector<GaussianPrimitive> prims(count);
    for (auto &p : prims) {
        p.position = {rng.uniform(-0.8, 0.8), rng.uniform(-0.6, 0.6), rng.uniform(2.5, 4.5)};
        p.opacity_logit = rng.uniform(0.0, 3.0);
        for (int k = 0; k < 3; ++k) p.log_scale[k] = std::log(rng.uniform(0.08, 0.25));
        p.rotation = UnitQuaternion::from_axis_angle(Vec3::UnitZ(), rng.uniform(0.0, 3.0));
        p.color = {rng.uniform(), rng.uniform(), rng.uniform()};
        p.lang_latent = VecX::Zero(kLatentDim);
    }
    return GaussianScene("sample", std::move(prims), kLatentDim, 1);
}

CameraModel
make_camera(double yaw) {
    CameraModel cam;
    cam.width = 64;
    cam.height = 48;
    cam.fx = cam.fy = 55.0;
    cam.cx = 32.0;
    cam.cy = 24.0;
    cam.world_from_camera.rotation = UnitQuaternion::from_axis_angle(Vec3::UnitY(), yaw);
    cam.world_from_camera.translation = Vec3(-3.5 * std::sin(yaw), 0.0, 3.5 - 3.5 * std::cos(yaw));
    return cam;
}

} // namespace

int
main(int argc, char **argv) try {
    const std::filesystem::path out = argc > 1 ? argv[1] : "scene_to_tokens_out";
    std::filesystem::create_directories(out);
    Rng rng(7);
    const GaussianScene scene = make_scene(rng, 60);

    // Targets rendered from a hidden latent assignment stand in for
    // features lifted from a vision-language model.
    std::vector<VecX> hidden;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        hidden.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()));
    }
    std::vector<CameraModel> cams;
    std::vector<Grid> targets;
    for (double yaw : {-0.2, 0.0, 0.2}) {
        cams.push_back(make_camera(yaw));
        targets.push_back(render(scene.with_latents(hidden), cams.back()).lang);
    }
    const auto fit = fit_language_field(scene, cams, targets);
    std::printf("language field: %d iterations, loss %.3g, max pixel distance %.3g\n", fit.iterations, fit.final_loss,
                fit.final_max_distance);

    const auto view = render(fit.scene, cams[1]);
    write_png(view.color, out / "color.png");

    const auto ae = make_autoencoder("sample", 1, {32, 16, kLatentDim});
    const auto proj = make_projector(2, 16, 24, 32);
    const auto tokens = tokenize_scene(fit.scene, proj, ae);
    std::printf("tokenized %zu primitives into %d-d tokens\n", tokens.size(),
                static_cast<int>(tokens.front().values.size()));

    std::vector<double> salience;
    for (const auto &p : fit.scene.primitives()) salience.push_back(1.0 / (1.0 + std::exp(-p.opacity_logit)));
    SamplingConfig cfg;
    cfg.budget = 16;
    cfg.seed = 3;
    const auto picked = hybrid_sample(salience, cfg);
    std::printf("hybrid sample kept %zu of %zu tokens, first ranked %zu\n", picked.size(), tokens.size(),
                picked.ranked.front());
    std::printf("wrote %s\n", (out / "color.png").string().c_str());
    return 0;
} catch (const Error &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
}

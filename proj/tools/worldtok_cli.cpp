// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// worldtok: command-line driver for the toolkit. Every subcommand reads and
// writes the formats owned by the library modules, prints one JSON summary
// line on success and exits with
//   0 success, 2 usage error, 3 data error, 4 numeric failure.
// Failures print a single line "error: kind=<kind> message=<text>" to stderr.
//
// Options may also come from a flat JSON object given with --config; keys are
// long option names without the leading dashes. Explicit flags win.

#include <worldtok/autoencoder.hpp>
#include <worldtok/dataset.hpp>
#include <worldtok/genmath.hpp>
#include <worldtok/geometry.hpp>
#include <worldtok/lang_fit.hpp>
#include <worldtok/png.hpp>
#include <worldtok/render.hpp>
#include <worldtok/sampler.hpp>
#include <worldtok/scene_io.hpp>
#include <worldtok/tokenizer.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace worldtok;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] void
usage(const std::string &msg) {
    throw UsageError(msg);
}

std::string
one_line(std::string s) {
    for (char &c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

void
print_summary(const json &j) {
    std::cout << j.dump() << "\n";
}

// --- shared conversions -------------------------------------------------------

/// Pixels of `g` as rows of a matrix (H*W x C).
MatX
grid_rows(const Grid &g) {
    MatX m(static_cast<Eigen::Index>(g.pixels()), g.channels());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = g.data()[static_cast<std::size_t>(i * m.cols() + c)];
    }
    return m;
}

/// Rows of `m` as an N x 1 x C grid.
Grid
rows_grid(const MatX &m) {
    Grid g(static_cast<int>(m.rows()), 1, static_cast<int>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) g.at(static_cast<int>(i), 0, static_cast<int>(c)) = m(i, c);
    }
    return g;
}

std::vector<VecX>
grid_vectors(const Grid &g) {
    const MatX m = grid_rows(g);
    std::vector<VecX> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m.row(i).transpose());
    return out;
}

json
read_json_file(const fs::path &path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error &e) {
        fail(ErrorKind::MalformedJson, path.string() + ": " + e.what());
    }
}

CameraModel
load_camera(const fs::path &path) {
    CameraModel cam = camera_from_json(read_json_file(path));
    cam.validate();
    return cam;
}

std::string
format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void
write_loss_csv(const std::string &path, std::uint64_t first_iteration, const std::vector<double> &curve) {
    if (path.empty()) return;
    std::string out = "iteration,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
        out += std::to_string(first_iteration + i) + "," + format_double(curve[i]) + "\n";
    }
    write_text(path, out);
}

Pose
pose_from_values(const std::vector<double> &v) {
    if (v.size() != 7) usage("pose needs 7 values: x y z qx qy qz qw");
    return {Vec3(v[0], v[1], v[2]), UnitQuaternion(v[3], v[4], v[5], v[6])};
}

// --- config -------------------------------------------------------------------

/// Feeds keys of a flat JSON object into options of `app` that were not given
/// on the command line.
void
apply_config(CLI::App *app, const json &cfg, const std::string &origin) {
    if (!cfg.is_object()) usage(origin + ": config must be a JSON object");
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        std::string key = it.key();
        std::replace(key.begin(), key.end(), '_', '-');
        if (key == "config") usage(origin + ": config files cannot nest");
        CLI::Option *opt = app->get_option_no_throw("--" + key);
        if (opt == nullptr) usage(origin + ": unknown option '" + it.key() + "' for '" + app->get_name() + "'");
        if (opt->count() > 0) continue;
        auto add = [&](const json &v) {
            if (v.is_string()) opt->add_result(v.get<std::string>());
            else if (v.is_boolean()) opt->add_result(v.get<bool>() ? "true" : "false");
            else if (v.is_number()) opt->add_result(v.dump());
            else usage(origin + ": option '" + it.key() + "' has an unsupported value");
        };
        if (it->is_array()) {
            for (const auto &v : *it) add(v);
        } else {
            add(*it);
        }
        try {
            opt->run_callback();
        } catch (const CLI::Error &e) {
            usage(origin + ": option '" + it.key() + "': " + e.what());
        }
    }
}

/// Checks options that may come from either the command line or the config.
void
need(CLI::App *app, std::initializer_list<const char *> names) {
    for (const char *n : names) {
        if (app->get_option(n)->count() == 0) usage(std::string(n) + " is required for '" + app->get_name() + "'");
    }
}

struct Command {
    CLI::App *app;
    std::function<void()> run;
    std::vector<const char *> required;
};

// --- render -------------------------------------------------------------------

struct RenderArgs {
    std::string scene, camera, out_dir;
    int tile_size = 16;
    int threads = 1;
};

void
run_render(const RenderArgs &a) {
    const GaussianScene scene = load_scene(a.scene);
    const CameraModel cam = load_camera(a.camera);
    const RenderOutput out = render(scene, cam, {a.tile_size, a.threads});
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    write_png(out.color, dir / "color.png");
    write_raw_map(out.color, dir / "color");
    write_raw_map(out.lang, dir / "lang");
    write_raw_map(out.depth, dir / "depth");
    write_raw_map(out.weight_sum, dir / "weight_sum");
    write_png(normalized_channel(out.depth), dir / "depth.png");
    print_summary({{"command", "render"},
                   {"scene", scene.scene_id()},
                   {"width", cam.width},
                   {"height", cam.height},
                   {"projected", out.diagnostics.projected},
                   {"culled", out.diagnostics.culled},
                   {"degenerate", out.diagnostics.degenerate}});
}

// --- fit-lang -----------------------------------------------------------------

struct FitArgs {
    std::string scene, out, loss_csv;
    std::vector<std::string> cameras, targets;
    LangFitOptions opts;
};

void
run_fit(const FitArgs &a) {
    if (a.cameras.size() != a.targets.size()) usage("--camera and --target must be given the same number of times");
    const GaussianScene scene = load_scene(a.scene);
    std::vector<CameraModel> cams;
    std::vector<Grid> targets;
    for (const auto &c : a.cameras) cams.push_back(load_camera(c));
    for (const auto &t : a.targets) targets.push_back(read_raw_map(t));
    const LangFitResult res = fit_language_field(scene, cams, targets, a.opts);
    save_scene(res.scene, a.out);
    write_loss_csv(a.loss_csv, 0, res.loss_curve);
    print_summary({{"command", "fit-lang"},
                   {"iterations", res.iterations},
                   {"initial_loss", res.loss_curve.empty() ? res.final_loss : res.loss_curve.front()},
                   {"final_loss", res.final_loss},
                   {"final_max_distance", res.final_max_distance}});
}

// --- tokenize -----------------------------------------------------------------

struct TokenizeArgs {
    std::string scene, projector, autoencoder, out;
    int threads = 1;
};

void
run_tokenize(const TokenizeArgs &a) {
    const GaussianScene scene = load_scene(a.scene);
    const ProjectorParams proj = load_projector(a.projector);
    const AutoencoderModel ae = load_autoencoder(a.autoencoder);
    const TokenSet set = make_token_set(scene, tokenize_scene(scene, proj, ae, a.threads));
    save_tokens(set, a.out);
    print_summary({{"command", "tokenize"},
                   {"scene", set.scene_id},
                   {"count", set.size()},
                   {"token_dim", set.tokens.cols()},
                   {"source_scene_hash", hex64(set.source_hash)}});
}

// --- sample -------------------------------------------------------------------

struct SampleArgs {
    std::string tokens, mode = "hybrid", query, out;
    SamplingConfig cfg;
    int threads = 1;
};

void
run_sample(const SampleArgs &a) {
    const TokenSet set = load_tokens(a.tokens);
    SampleResult r;
    if (a.mode == "hybrid") {
        if (!a.query.empty()) usage("--query only applies to --mode language");
        r = hybrid_sample(set.salience, a.cfg);
    } else {
        if (a.query.empty()) usage("--mode language needs --query");
        r = language_guided_sample(set.tokens, grid_rows(read_raw_map(a.query)), a.cfg, a.threads);
    }
    std::vector<double> score_of(set.size(), 0.0);
    for (std::size_t i = 0; i < r.indices.size(); ++i) score_of[r.indices[i]] = r.scores[i];
    std::string lines;
    for (std::size_t k = 0; k < r.ranked.size(); ++k) {
        const std::size_t idx = r.ranked[k];
        lines += json{{"rank", k}, {"index", idx}, {"score", score_of[idx]}}.dump() + "\n";
    }
    if (a.out.empty()) {
        std::cout << lines;
        return;
    }
    write_text(a.out, lines);
    print_summary({{"command", "sample"}, {"method", r.method}, {"available", set.size()}, {"selected", r.size()}});
}

// --- condition ----------------------------------------------------------------

struct ConditionArgs {
    std::string cloud, camera, preset, out;
    double hfov = 70.0;
    double shift = 0.0;
    std::vector<double> pose;
    int threads = 1;
    bool no_preview = false;
};

void
run_condition(CLI::App *app, const ConditionArgs &a) {
    if (a.camera.empty() == a.preset.empty()) usage("give exactly one of --camera or --preset");
    const bool has_shift = app->get_option("--shift")->count() > 0;
    if (has_shift && !a.pose.empty()) usage("--shift and --pose are exclusive");
    const ColoredPointCloud cloud = parse_point_cloud(read_text(a.cloud), a.cloud);
    const CameraModel cam =
        a.camera.empty() ? preset_camera(a.preset == "low" ? ConditionPreset::Low : ConditionPreset::High, a.hfov)
                         : load_camera(a.camera);
    const SparseConditionMap map = a.pose.empty()
                                       ? build_spatial_condition(cloud, cam, a.shift, a.threads)
                                       : build_temporal_condition(cloud, cam, pose_from_values(a.pose), a.threads);
    save_condition_map(map, a.out, !a.no_preview);
    print_summary({{"command", "condition"},
                   {"mode", a.pose.empty() ? "spatial" : "temporal"},
                   {"width", map.width()},
                   {"height", map.height()},
                   {"points", cloud.size()},
                   {"valid_pixels", map.valid_count()}});
}

// --- dataset ------------------------------------------------------------------

struct DatasetQaArgs {
    std::string input, out, format = "jsonl";
};

void
run_dataset_qa(const DatasetQaArgs &a) {
    const std::string text = read_text(a.input);
    std::vector<QaRecord> records;
    // A lone pretty-printed record parses as one JSON value; otherwise lines.
    bool single = false;
    try {
        const json j = json::parse(text);
        single = j.is_object();
        if (single) records.push_back(qa_record_from_json(j));
    } catch (const json::parse_error &) {
    }
    if (!single) records = parse_qa_jsonl(text);
    std::string out;
    if (a.format == "jsonl") {
        out = emit_qa_jsonl(records);
    } else {
        for (const auto &r : records) out += emit_qa_record(r) + "\n";
    }
    write_text(a.out, out);
    print_summary({{"command", "dataset qa"}, {"records", records.size()}, {"format", a.format}});
}

struct DatasetTrajectoryArgs {
    std::string input, out, format = "jsonl";
};

TrajectoryClip
clip_from_json(const json &j) {
    require(j.is_object() && j.contains("poses") && j["poses"].is_array(), ErrorKind::SchemaViolation,
            "trajectory clip needs a \"poses\" array");
    std::vector<PoseRow> rows;
    for (const auto &p : j["poses"]) {
        require(p.is_array() && p.size() == 7, ErrorKind::SchemaViolation,
                "each pose must be [x, y, z, qx, qy, qz, qw]");
        PoseRow r{};
        for (std::size_t k = 0; k < 7; ++k) {
            require(p[k].is_number(), ErrorKind::SchemaViolation, "pose values must be numbers");
            r[k] = p[k].get<double>();
        }
        rows.push_back(r);
    }
    TrajectoryClip c = TrajectoryClip::from_rows(rows);
    if (j.contains("times")) {
        require(j["times"].is_array(), ErrorKind::SchemaViolation, "\"times\" must be an array");
        for (const auto &t : j["times"]) {
            require(t.is_number(), ErrorKind::SchemaViolation, "frame times must be numbers");
            c.times.push_back(t.get<double>());
        }
        c.validate();
    }
    return c;
}

void
run_dataset_trajectory(const DatasetTrajectoryArgs &a) {
    const json in = read_json_file(a.input);
    require(in.is_object() && in.contains("clips") && in["clips"].is_array(), ErrorKind::SchemaViolation,
            a.input + ": expected {\"clips\": [...]}");
    std::string out;
    std::size_t n = 0;
    for (const auto &c : in["clips"]) {
        const TrajectoryQa qa = build_trajectory_qa(clip_from_json(c));
        const std::string token = c.value("token", "clip" + std::to_string(n));
        if (a.format == "jsonl") {
            nlohmann::ordered_json line;
            line["token"] = token;
            line["conversations"] = nlohmann::ordered_json::array();
            for (const auto &t : qa.conversations()) line["conversations"].push_back({{"from", t.from}, {"value", t.value}});
            out += line.dump() + "\n";
        } else {
            out += emit_conversations(qa.conversations(), 8, 4) + "\n";
        }
        ++n;
    }
    write_text(a.out, out);
    print_summary({{"command", "dataset trajectory"}, {"clips", n}, {"format", a.format}});
}

struct DatasetFilterArgs {
    std::string manifest, out;
    double threshold = kDefaultPsnrThreshold;
};

void
run_dataset_filter(const DatasetFilterArgs &a) {
    const json m = read_json_file(a.manifest);
    require(m.is_object() && m.contains("scenes") && m["scenes"].is_array(), ErrorKind::SchemaViolation,
            a.manifest + ": expected {\"scenes\": [...]}");
    const fs::path base = fs::path(a.manifest).parent_path();
    std::vector<SceneViews> scenes;
    for (const auto &s : m["scenes"]) {
        SceneViews v;
        try {
            v.scene_id = s.at("id").get<std::string>();
            for (const auto &p : s.at("renders")) v.renders.push_back(read_raw_map(base / p.get<std::string>()));
            for (const auto &p : s.at("ground_truth")) v.ground_truth.push_back(read_raw_map(base / p.get<std::string>()));
        } catch (const json::exception &e) {
            fail(ErrorKind::SchemaViolation, a.manifest + ": " + e.what());
        }
        scenes.push_back(std::move(v));
    }
    json report = {{"threshold_db", a.threshold}, {"scenes", json::array()}};
    for (const auto &s : scenes) report["scenes"].push_back({{"id", s.scene_id}, {"mean_psnr", mean_psnr(s)}});
    const auto kept = filter_scenes_by_psnr(scenes, a.threshold);
    report["kept"] = kept;
    write_text(a.out, report.dump(2) + "\n");
    print_summary({{"command", "dataset filter"}, {"scenes", scenes.size()}, {"kept", kept.size()}});
}

// --- train --------------------------------------------------------------------

struct TrainAeArgs {
    std::string features, out, resume, loss_csv, scene_id = "scene";
    std::vector<int> hidden = {256, 64};
    int latent_dim = kLatentDim;
    std::uint64_t init_seed = 0;
    AeTrainOptions opts;
};

void
run_train_autoencoder(const TrainAeArgs &a) {
    const std::vector<VecX> feats = grid_vectors(read_raw_map(a.features));
    AeTrainState state;
    AutoencoderModel model;
    if (!a.resume.empty()) {
        model = load_autoencoder(a.resume, &state);
    } else {
        std::vector<int> dims{feats.empty() ? 0 : static_cast<int>(feats.front().size())};
        dims.insert(dims.end(), a.hidden.begin(), a.hidden.end());
        dims.push_back(a.latent_dim);
        model = make_autoencoder(a.scene_id, a.init_seed, dims);
    }
    const std::uint64_t start = state.iteration;
    const AeTrainResult res = train_autoencoder(model, feats, a.opts, state);
    save_autoencoder(res.model, a.out, &res.state);
    write_loss_csv(a.loss_csv, start, res.loss_curve);
    double worst_cos = 1.0;
    for (const auto &f : feats) worst_cos = std::min(worst_cos, cosine_similarity(decode(res.model, encode(res.model, f)), f));
    print_summary({{"command", "train autoencoder"},
                   {"iteration", res.state.iteration},
                   {"initial_loss", res.loss_curve.empty() ? 0.0 : res.loss_curve.front()},
                   {"final_loss", res.loss_curve.empty() ? 0.0 : res.loss_curve.back()},
                   {"min_cosine", worst_cos}});
}

struct TrainProjectorArgs {
    std::string scene, autoencoder, targets, out, resume, loss_csv;
    int hidden = 128;
    int fourier_bands = 10;
    std::uint64_t init_seed = 0;
    ProjectorTrainOptions opts;
};

void
run_train_projector(const TrainProjectorArgs &a) {
    const GaussianScene scene = load_scene(a.scene);
    const AutoencoderModel ae = load_autoencoder(a.autoencoder);
    const MatX targets = grid_rows(read_raw_map(a.targets)).transpose();
    require(targets.cols() == static_cast<Eigen::Index>(scene.size()), ErrorKind::DimensionMismatch,
            "projector targets: need one row per primitive");
    ProjectorTrainState state;
    ProjectorParams proj;
    if (!a.resume.empty()) {
        proj = load_projector(a.resume, &state);
    } else {
        FourierConfig f;
        f.num_bands = a.fourier_bands;
        proj = make_projector(a.init_seed, static_cast<int>(targets.rows()), a.hidden, ae.feature_dim(), f);
    }
    const ProjectorBatch data = make_projector_batch(scene, ae, proj.fourier);
    const std::uint64_t start = state.iteration;
    const ProjectorTrainResult res = train_projector(proj, data, targets, a.opts, state);
    save_projector(res.params, a.out, &res.state);
    write_loss_csv(a.loss_csv, start, res.loss_curve);
    print_summary({{"command", "train projector"},
                   {"iteration", res.state.iteration},
                   {"initial_loss", res.loss_curve.empty() ? 0.0 : res.loss_curve.front()},
                   {"final_loss", res.loss_curve.empty() ? 0.0 : res.loss_curve.back()}});
}

struct TrainDenoiserArgs {
    std::string data, out, resume, loss_csv, schedule = "cosine";
    int steps = 1000;
    std::vector<int> hidden = {32, 32};
    int time_bands = 8;
    int eval_draws = 200;
    std::uint64_t init_seed = 0;
    DenoiserTrainOptions opts;
};

std::vector<DenoiserSample>
load_denoiser_data(const std::string &manifest) {
    const json m = read_json_file(manifest);
    require(m.is_object() && m.contains("samples") && m["samples"].is_array() && !m["samples"].empty(),
            ErrorKind::SchemaViolation, manifest + ": expected {\"samples\": [...]}");
    const fs::path base = fs::path(manifest).parent_path();
    std::vector<DenoiserSample> out;
    for (const auto &s : m["samples"]) {
        DenoiserSample d;
        try {
            d.clean = read_raw_map(base / s.at("clean").get<std::string>());
            d.condition = load_condition_map(base / s.at("condition").get<std::string>());
            if (s.contains("context")) d.context = grid_rows(read_raw_map(base / s.at("context").get<std::string>()));
        } catch (const json::exception &e) {
            fail(ErrorKind::SchemaViolation, manifest + ": " + e.what());
        }
        out.push_back(std::move(d));
    }
    return out;
}

void
run_train_denoiser(const TrainDenoiserArgs &a) {
    const auto data = load_denoiser_data(a.data);
    const NoiseSchedule sched = make_schedule(a.steps, schedule_family_from_string(a.schedule));
    DenoiserTrainState state;
    ToyDenoiser model;
    if (!a.resume.empty()) {
        model = load_denoiser(a.resume, &state);
    } else {
        model = make_toy_denoiser(data.front().clean.channels(), static_cast<int>(data.front().context.cols()),
                                  a.init_seed, a.hidden, a.time_bands);
    }
    if (a.eval_draws < 1) usage("--eval-draws must be >= 1");
    const std::uint64_t eval_seed = Rng::splitmix64(a.opts.seed ^ 0xe7a1ULL);
    const double before = denoiser_eval_loss(model, data, sched, a.opts, a.eval_draws, eval_seed);
    const std::uint64_t start = state.iteration;
    const DenoiserTrainResult res = train_toy_denoiser(model, data, sched, a.opts, state);
    const double after = denoiser_eval_loss(res.model, data, sched, a.opts, a.eval_draws, eval_seed);
    save_denoiser(res.model, a.out, &res.state);
    write_loss_csv(a.loss_csv, start, res.loss_curve);
    print_summary({{"command", "train denoiser"},
                   {"iteration", res.state.iteration},
                   {"eval_loss_before", before},
                   {"eval_loss_after", after},
                   {"ratio", before > 0.0 ? after / before : 0.0}});
}

// --- synth: demo inputs --------------------------------------------------------

struct SynthSceneArgs {
    std::string out, camera_out, id = "synthetic";
    int count = 40;
    int lang_dim = kLatentDim;
    int levels = 1;
    int width = 64, height = 64;
    double focal = 60.0;
    std::uint64_t seed = 0;
};

void
run_synth_scene(const SynthSceneArgs &a) {
    if (a.count < 1) usage("--count must be >= 1");
    Rng rng(a.seed);
    std::vector<GaussianPrimitive> prims(static_cast<std::size_t>(a.count));
    for (auto &p : prims) {
        p.position = {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(2.0, 5.0)};
        p.opacity_logit = rng.uniform(-1.0, 3.0);
        for (int k = 0; k < 3; ++k) p.log_scale[k] = std::log(rng.uniform(0.05, 0.25));
        Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        q /= std::max(q.norm(), 1e-9);
        p.rotation = UnitQuaternion(q[0], q[1], q[2], q[3]);
        p.color = {rng.uniform(), rng.uniform(), rng.uniform()};
        p.lang_latent = VecX(a.lang_dim * a.levels);
        for (Eigen::Index k = 0; k < p.lang_latent.size(); ++k) p.lang_latent[k] = rng.normal();
    }
    const GaussianScene scene(a.id, std::move(prims), a.lang_dim, a.levels);
    save_scene(scene, a.out);
    if (!a.camera_out.empty()) {
        CameraModel cam;
        cam.width = a.width;
        cam.height = a.height;
        cam.fx = cam.fy = a.focal;
        cam.cx = a.width / 2.0;
        cam.cy = a.height / 2.0;
        cam.validate();
        write_text(a.camera_out, camera_to_json(cam).dump(2) + "\n");
    }
    print_summary({{"command", "synth scene"}, {"count", scene.size()}, {"latent_width", scene.latent_width()}});
}

struct SynthCloudArgs {
    std::string out;
    int count = 2000;
    std::uint64_t seed = 0;
};

void
run_synth_cloud(const SynthCloudArgs &a) {
    Rng rng(a.seed);
    ColoredPointCloud cloud;
    // A ground plane below the camera plus a box ahead of it.
    for (int i = 0; i < a.count; ++i) {
        ColoredPoint p;
        if (i % 2 == 0) {
            p.position = {rng.uniform(-6, 6), 1.5, rng.uniform(1, 30)};
            p.color = {0.4, 0.4, 0.45};
        } else {
            p.position = {rng.uniform(-1, 1), rng.uniform(-1, 1.5), rng.uniform(8, 10)};
            p.color = {0.8, 0.2 + 0.1 * rng.uniform(), 0.1};
        }
        cloud.points.push_back(p);
    }
    write_text(a.out, format_point_cloud(cloud));
    print_summary({{"command", "synth cloud"}, {"points", cloud.size()}});
}

struct SynthFeaturesArgs {
    std::string out;
    int count = 64;
    int dim = kFeatureDim;
    int clusters = 3;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

void
run_synth_features(const SynthFeaturesArgs &a) {
    if (a.count < 1 || a.dim < 1 || a.clusters < 1) usage("--count, --dim and --clusters must be >= 1");
    Rng rng(a.seed);
    std::vector<VecX> centers;
    for (int c = 0; c < a.clusters; ++c) {
        VecX v(a.dim);
        for (int k = 0; k < a.dim; ++k) v[k] = rng.normal();
        centers.push_back(v.normalized());
    }
    MatX rows(a.count, a.dim);
    for (int i = 0; i < a.count; ++i) {
        for (int k = 0; k < a.dim; ++k) rows(i, k) = centers[static_cast<std::size_t>(i % a.clusters)][k] + a.noise * rng.normal() / std::sqrt(a.dim);
    }
    write_raw_map(rows_grid(rows), a.out);
    print_summary({{"command", "synth features"}, {"count", a.count}, {"dim", a.dim}});
}

struct SynthLangTargetsArgs {
    std::string scene, camera, out;
    std::uint64_t seed = 0;
};

void
run_synth_lang_targets(const SynthLangTargetsArgs &a) {
    const GaussianScene scene = load_scene(a.scene);
    const CameraModel cam = load_camera(a.camera);
    Rng rng(a.seed);
    std::vector<VecX> hidden(scene.size(), VecX(scene.latent_width()));
    for (auto &v : hidden) {
        for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = rng.normal();
    }
    const RenderOutput out = render(scene.with_latents(hidden), cam);
    write_raw_map(out.lang, a.out);
    print_summary({{"command", "synth lang-targets"}, {"width", cam.width}, {"height", cam.height}});
}

struct SynthTokenTargetsArgs {
    std::string scene, out;
    int dim = 256;
    std::uint64_t seed = 0;
};

void
run_synth_token_targets(const SynthTokenTargetsArgs &a) {
    if (a.dim < 1) usage("--dim must be >= 1");
    const GaussianScene scene = load_scene(a.scene);
    Rng rng(a.seed);
    // Targets depend smoothly on position so a projector can fit them.
    MatX w(3, a.dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    MatX rows(static_cast<Eigen::Index>(scene.size()), a.dim);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3 &p = scene.primitives()[i].position;
        rows.row(static_cast<Eigen::Index>(i)) = (p.transpose() * w).array().sin().matrix();
    }
    write_raw_map(rows_grid(rows), a.out);
    print_summary({{"command", "synth token-targets"}, {"count", scene.size()}, {"dim", a.dim}});
}

struct SynthQueryArgs {
    std::string tokens, out;
    std::vector<int> indices = {0};
    double noise = 0.01;
    std::uint64_t seed = 0;
};

void
run_synth_query(const SynthQueryArgs &a) {
    const TokenSet set = load_tokens(a.tokens);
    Rng rng(a.seed);
    MatX q(static_cast<Eigen::Index>(a.indices.size()), set.tokens.cols());
    for (std::size_t r = 0; r < a.indices.size(); ++r) {
        require(a.indices[r] >= 0 && static_cast<std::size_t>(a.indices[r]) < set.size(), ErrorKind::InvalidArgument,
                "query index out of range");
        for (Eigen::Index k = 0; k < q.cols(); ++k) {
            q(static_cast<Eigen::Index>(r), k) = set.tokens(a.indices[r], k) + a.noise * rng.normal();
        }
    }
    write_raw_map(rows_grid(q), a.out);
    print_summary({{"command", "synth query"}, {"rows", q.rows()}, {"dim", q.cols()}});
}

struct SynthDenoiserArgs {
    std::string out_dir;
    int count = 2;
    int size = 8;
    int channels = 3;
    int context_dim = 0;
    std::uint64_t seed = 0;
};

void
run_synth_denoiser(const SynthDenoiserArgs &a) {
    if (a.count < 1 || a.size < 1 || a.channels < 1 || a.context_dim < 0) usage("bad denoiser data shape");
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    Rng rng(a.seed);
    json manifest = {{"samples", json::array()}};
    const TypeEmbeddings types = a.context_dim > 0 ? TypeEmbeddings::random(a.context_dim, a.seed) : TypeEmbeddings{};
    for (int s = 0; s < a.count; ++s) {
        const double phase = rng.uniform(0.0, 3.0);
        Grid clean(a.size, a.size, a.channels);
        SparseConditionMap cond(a.size, a.size);
        for (int y = 0; y < a.size; ++y) {
            for (int x = 0; x < a.size; ++x) {
                for (int c = 0; c < a.channels; ++c) {
                    clean.at(y, x, c) = std::sin(0.5 * x + phase + c) * std::cos(0.3 * y - c);
                }
                for (int c = 0; c < 3; ++c) cond.rgb.at(y, x, c) = round_f32(clean.at(y, x, c % a.channels));
                cond.depth.at(y, x) = round_f32(2.0 + 0.1 * x);
                cond.mask.at(y, x) = 1.0;
            }
        }
        const std::string stem = "sample" + std::to_string(s);
        write_raw_map(clean, dir / (stem + "_clean"));
        save_condition_map(cond, dir / (stem + "_cond"), false);
        json entry = {{"clean", stem + "_clean"}, {"condition", stem + "_cond"}};
        if (a.context_dim > 0) {
            MatX img(3, a.context_dim), txt(2, a.context_dim);
            for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.normal();
            for (Eigen::Index i = 0; i < txt.size(); ++i) txt.data()[i] = rng.normal();
            write_raw_map(rows_grid(assemble_condition_sequence(img, txt, types)), dir / (stem + "_context"));
            entry["context"] = stem + "_context";
        }
        manifest["samples"].push_back(entry);
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    print_summary({{"command", "synth denoiser-data"}, {"samples", a.count}});
}

// --- registration ---------------------------------------------------------------

template <typename T>
CLI::Option *
opt(CLI::App *app, const std::string &name, T &var, const std::string &help) {
    return app->add_option(name, var, help)->capture_default_str();
}

void
add_render_opts(CLI::App *app, RenderOptions &r) {
    opt(app, "--tile-size", r.tile_size, "Rasterizer tile size in pixels")->check(CLI::Range(1, 4096));
    opt(app, "--threads", r.threads, "Worker threads")->check(CLI::Range(1, 1024));
}

struct Args {
    RenderArgs render;
    FitArgs fit;
    TokenizeArgs tokenize;
    SampleArgs sample;
    ConditionArgs condition;
    DatasetQaArgs qa;
    DatasetTrajectoryArgs trajectory;
    DatasetFilterArgs filter;
    TrainAeArgs ae;
    TrainProjectorArgs projector;
    TrainDenoiserArgs denoiser;
    SynthSceneArgs synth_scene;
    SynthCloudArgs synth_cloud;
    SynthFeaturesArgs synth_features;
    SynthLangTargetsArgs synth_lang;
    SynthTokenTargetsArgs synth_tokens;
    SynthQueryArgs synth_query;
    SynthDenoiserArgs synth_denoiser;
};

std::vector<Command>
register_commands(CLI::App &app, Args &a, std::string &config) {
    std::vector<Command> cmds;

    {
        auto *c = app.add_subcommand("render", "Render color, language and depth maps of a scene");
        auto &r = a.render;
        opt(c, "--scene", r.scene, "Scene file");
        opt(c, "--camera", r.camera, "Camera JSON");
        opt(c, "--out-dir", r.out_dir, "Output directory");
        opt(c, "--tile-size", r.tile_size, "Rasterizer tile size in pixels")->check(CLI::Range(1, 4096));
        opt(c, "--threads", r.threads, "Worker threads")->check(CLI::Range(1, 1024));
        cmds.push_back({c, [&r] { run_render(r); }, {"--scene", "--camera", "--out-dir"}});
    }
    {
        auto *c = app.add_subcommand("fit-lang", "Fit per-splat language latents to target maps");
        auto &f = a.fit;
        opt(c, "--scene", f.scene, "Scene file");
        opt(c, "--camera", f.cameras, "Camera JSON (repeat per view)");
        opt(c, "--target", f.targets, "Target lang raw map (repeat; one per camera)");
        opt(c, "--out", f.out, "Output scene file");
        opt(c, "--loss-csv", f.loss_csv, "Loss curve CSV");
        opt(c, "--iters", f.opts.iters, "Iterations")->check(CLI::NonNegativeNumber);
        opt(c, "--lr", f.opts.lr, "Adam learning rate")->check(CLI::PositiveNumber);
        opt(c, "--coverage", f.opts.coverage, "Ignore pixels with weight_sum below this");
        opt(c, "--stop", f.opts.stop_max_distance, "Stop once every pixel distance is below this (0 disables)");
        add_render_opts(c, f.opts.render);
        cmds.push_back({c, [&f] { run_fit(f); }, {"--scene", "--camera", "--target", "--out"}});
    }
    {
        auto *c = app.add_subcommand("tokenize", "Turn every Gaussian of a scene into a token");
        auto &t = a.tokenize;
        opt(c, "--scene", t.scene, "Scene file");
        opt(c, "--projector", t.projector, "Projector checkpoint");
        opt(c, "--autoencoder", t.autoencoder, "Autoencoder checkpoint (decoder is used)");
        opt(c, "--out", t.out, "Token dump");
        opt(c, "--threads", t.threads, "Worker threads")->check(CLI::Range(1, 1024));
        cmds.push_back({c, [&t] { run_tokenize(t); }, {"--scene", "--projector", "--autoencoder", "--out"}});
    }
    {
        auto *c = app.add_subcommand("sample", "Select a token subset (JSON lines, rank order)");
        auto &s = a.sample;
        opt(c, "--tokens", s.tokens, "Token dump");
        opt(c, "--mode", s.mode, "hybrid | language")->check(CLI::IsMember({"hybrid", "language"}));
        opt(c, "--query", s.query, "Query tokens raw map (language mode)");
        opt(c, "--budget", s.cfg.budget, "Tokens to keep")->check(CLI::PositiveNumber);
        opt(c, "--uniform-fraction", s.cfg.uniform_fraction, "Uniform share of the budget")->check(CLI::Range(0.0, 1.0));
        opt(c, "--temperature", s.cfg.temperature, "Attention temperature")->check(CLI::PositiveNumber);
        opt(c, "--seed", s.cfg.seed, "Random seed");
        opt(c, "--threads", s.threads, "Worker threads")->check(CLI::Range(1, 1024));
        opt(c, "--out", s.out, "Output JSON lines (default stdout)");
        cmds.push_back({c, [&s] { run_sample(s); }, {"--tokens"}});
    }
    {
        auto *c = app.add_subcommand("condition", "Project a point cloud into a shifted or future camera");
        auto &g = a.condition;
        opt(c, "--cloud", g.cloud, "Point cloud text (x y z r g b per line)");
        opt(c, "--camera", g.camera, "Base camera JSON");
        opt(c, "--preset", g.preset, "low (224x400) | high (424x800)")->check(CLI::IsMember({"low", "high"}));
        opt(c, "--hfov", g.hfov, "Preset horizontal field of view in degrees");
        opt(c, "--shift", g.shift, "Lateral shift in meters");
        opt(c, "--pose", g.pose, "Future pose x y z qx qy qz qw")->expected(7);
        opt(c, "--threads", g.threads, "Worker threads")->check(CLI::Range(1, 1024));
        opt(c, "--out", g.out, "Output stem");
        c->add_flag("--no-preview", g.no_preview, "Skip PNG previews");
        cmds.push_back({c, [c, &g] { run_condition(c, g); }, {"--cloud", "--out"}});
    }
    {
        auto *d = app.add_subcommand("dataset", "QA and trajectory records, scene filtering");
        d->require_subcommand(1);
        auto *q = d->add_subcommand("qa", "Validate QA records and re-emit them");
        opt(q, "--input", a.qa.input, "QA record (pretty) or JSON lines");
        opt(q, "--out", a.qa.out, "Output file");
        opt(q, "--format", a.qa.format, "jsonl | pretty")->check(CLI::IsMember({"jsonl", "pretty"}));
        cmds.push_back({q, [&a] { run_dataset_qa(a.qa); }, {"--input", "--out"}});
        auto *t = d->add_subcommand("trajectory", "Build ego-frame trajectory QA pairs from 10-frame clips");
        opt(t, "--input", a.trajectory.input, "JSON {\"clips\": [{\"token\", \"poses\": [[x,y,z,qx,qy,qz,qw] x10]}]}");
        opt(t, "--out", a.trajectory.out, "Output file");
        opt(t, "--format", a.trajectory.format, "jsonl | fragment")->check(CLI::IsMember({"jsonl", "fragment"}));
        cmds.push_back({t, [&a] { run_dataset_trajectory(a.trajectory); }, {"--input", "--out"}});
        auto *f = d->add_subcommand("filter", "Keep scenes whose mean PSNR reaches a threshold");
        opt(f, "--manifest", a.filter.manifest, "JSON {\"scenes\": [{\"id\", \"renders\", \"ground_truth\"}]}");
        opt(f, "--threshold", a.filter.threshold, "PSNR threshold in dB");
        opt(f, "--out", a.filter.out, "Report JSON");
        cmds.push_back({f, [&a] { run_dataset_filter(a.filter); }, {"--manifest", "--out"}});
    }
    {
        auto *tr = app.add_subcommand("train", "Training loops with checkpoints and loss CSVs");
        tr->require_subcommand(1);

        auto *e = tr->add_subcommand("autoencoder", "Scene-wise language autoencoder");
        auto &ae = a.ae;
        opt(e, "--features", ae.features, "Feature raw map (one feature per pixel)");
        opt(e, "--out", ae.out, "Checkpoint");
        opt(e, "--resume", ae.resume, "Continue from a checkpoint");
        opt(e, "--loss-csv", ae.loss_csv, "Loss curve CSV");
        opt(e, "--scene-id", ae.scene_id, "Scene id stored in the checkpoint");
        opt(e, "--hidden", ae.hidden, "Hidden encoder widths");
        opt(e, "--latent-dim", ae.latent_dim, "Latent width")->check(CLI::PositiveNumber);
        opt(e, "--init-seed", ae.init_seed, "Weight initialization seed");
        opt(e, "--iters", ae.opts.iters, "Iterations")->check(CLI::NonNegativeNumber);
        opt(e, "--lr", ae.opts.lr, "Adam learning rate")->check(CLI::PositiveNumber);
        opt(e, "--batch", ae.opts.batch, "Minibatch size (0 = full batch)")->check(CLI::NonNegativeNumber);
        opt(e, "--seed", ae.opts.seed, "Minibatch seed");
        cmds.push_back({e, [&ae] { run_train_autoencoder(ae); }, {"--features", "--out"}});

        auto *p = tr->add_subcommand("projector", "Attribute heads and fusion weights");
        auto &pj = a.projector;
        opt(p, "--scene", pj.scene, "Scene file");
        opt(p, "--autoencoder", pj.autoencoder, "Autoencoder checkpoint");
        opt(p, "--targets", pj.targets, "Target token raw map (one row per primitive)");
        opt(p, "--out", pj.out, "Checkpoint");
        opt(p, "--resume", pj.resume, "Continue from a checkpoint");
        opt(p, "--loss-csv", pj.loss_csv, "Loss curve CSV");
        opt(p, "--hidden", pj.hidden, "Hidden width per head")->check(CLI::PositiveNumber);
        opt(p, "--fourier-bands", pj.fourier_bands, "Fourier frequency bands")->check(CLI::PositiveNumber);
        opt(p, "--init-seed", pj.init_seed, "Weight initialization seed");
        opt(p, "--iters", pj.opts.iters, "Iterations")->check(CLI::NonNegativeNumber);
        opt(p, "--lr", pj.opts.lr, "Adam learning rate")->check(CLI::PositiveNumber);
        opt(p, "--batch", pj.opts.batch, "Minibatch size (0 = full batch)")->check(CLI::NonNegativeNumber);
        opt(p, "--seed", pj.opts.seed, "Minibatch seed");
        cmds.push_back({p, [&pj] { run_train_projector(pj); }, {"--scene", "--autoencoder", "--targets", "--out"}});

        auto *n = tr->add_subcommand("denoiser", "Toy v-prediction denoiser");
        auto &dn = a.denoiser;
        opt(n, "--data", dn.data, "Manifest JSON {\"samples\": [{\"clean\", \"condition\", \"context\"?}]}");
        opt(n, "--out", dn.out, "Checkpoint");
        opt(n, "--resume", dn.resume, "Continue from a checkpoint");
        opt(n, "--loss-csv", dn.loss_csv, "Loss curve CSV");
        opt(n, "--schedule", dn.schedule, "cosine | linear")->check(CLI::IsMember({"cosine", "linear"}));
        opt(n, "--steps", dn.steps, "Diffusion steps T")->check(CLI::PositiveNumber);
        opt(n, "--hidden", dn.hidden, "Hidden widths");
        opt(n, "--time-bands", dn.time_bands, "Timestep embedding bands")->check(CLI::PositiveNumber);
        opt(n, "--eval-draws", dn.eval_draws, "Fixed evaluation draws");
        opt(n, "--init-seed", dn.init_seed, "Weight initialization seed");
        opt(n, "--iters", dn.opts.iters, "Iterations")->check(CLI::NonNegativeNumber);
        opt(n, "--lr", dn.opts.lr, "Adam learning rate")->check(CLI::PositiveNumber);
        opt(n, "--seed", dn.opts.seed, "Draw seed");
        opt(n, "--fixed-t", dn.opts.fixed_t, "Pin the timestep (-1 samples it)");
        opt(n, "--t-min", dn.opts.t_min, "Lowest sampled timestep");
        opt(n, "--t-max", dn.opts.t_max, "Highest sampled timestep (-1 = T)");
        opt(n, "--divergence", dn.opts.divergence, "Abort when the loss exceeds this");
        cmds.push_back({n, [&dn] { run_train_denoiser(dn); }, {"--data", "--out"}});
    }
    {
        auto *s = app.add_subcommand("synth", "Generate demo inputs");
        s->require_subcommand(1);

        auto *sc = s->add_subcommand("scene", "Random scene in front of an origin camera");
        auto &ss = a.synth_scene;
        opt(sc, "--out", ss.out, "Scene file");
        opt(sc, "--camera-out", ss.camera_out, "Also write a matching camera JSON");
        opt(sc, "--id", ss.id, "Scene id");
        opt(sc, "--count", ss.count, "Primitives");
        opt(sc, "--lang-dim", ss.lang_dim, "Latent width per level")->check(CLI::PositiveNumber);
        opt(sc, "--levels", ss.levels, "Latent levels (1 or 3)")->check(CLI::IsMember({1, 3}));
        opt(sc, "--width", ss.width, "Camera width")->check(CLI::PositiveNumber);
        opt(sc, "--height", ss.height, "Camera height")->check(CLI::PositiveNumber);
        opt(sc, "--focal", ss.focal, "Camera focal length in pixels")->check(CLI::PositiveNumber);
        opt(sc, "--seed", ss.seed, "Random seed");
        cmds.push_back({sc, [&ss] { run_synth_scene(ss); }, {"--out"}});

        auto *cl = s->add_subcommand("cloud", "Ground plane and a box as a point cloud");
        opt(cl, "--out", a.synth_cloud.out, "Point cloud text");
        opt(cl, "--count", a.synth_cloud.count, "Points")->check(CLI::PositiveNumber);
        opt(cl, "--seed", a.synth_cloud.seed, "Random seed");
        cmds.push_back({cl, [&a] { run_synth_cloud(a.synth_cloud); }, {"--out"}});

        auto *fe = s->add_subcommand("features", "Clustered unit feature vectors");
        auto &sf = a.synth_features;
        opt(fe, "--out", sf.out, "Feature raw map stem");
        opt(fe, "--count", sf.count, "Features");
        opt(fe, "--dim", sf.dim, "Feature width");
        opt(fe, "--clusters", sf.clusters, "Cluster centers");
        opt(fe, "--noise", sf.noise, "Per-feature noise");
        opt(fe, "--seed", sf.seed, "Random seed");
        cmds.push_back({fe, [&sf] { run_synth_features(sf); }, {"--out"}});

        auto *lt = s->add_subcommand("lang-targets", "Render a lang map from hidden random latents");
        auto &sl = a.synth_lang;
        opt(lt, "--scene", sl.scene, "Scene file");
        opt(lt, "--camera", sl.camera, "Camera JSON");
        opt(lt, "--out", sl.out, "Target raw map stem");
        opt(lt, "--seed", sl.seed, "Random seed");
        cmds.push_back({lt, [&sl] { run_synth_lang_targets(sl); }, {"--scene", "--camera", "--out"}});

        auto *tt = s->add_subcommand("token-targets", "Smooth per-primitive regression targets");
        auto &st = a.synth_tokens;
        opt(tt, "--scene", st.scene, "Scene file");
        opt(tt, "--out", st.out, "Target raw map stem");
        opt(tt, "--dim", st.dim, "Token width");
        opt(tt, "--seed", st.seed, "Random seed");
        cmds.push_back({tt, [&st] { run_synth_token_targets(st); }, {"--scene", "--out"}});

        auto *qu = s->add_subcommand("query", "Noisy copies of chosen tokens as a query");
        auto &sq = a.synth_query;
        opt(qu, "--tokens", sq.tokens, "Token dump");
        opt(qu, "--out", sq.out, "Query raw map stem");
        opt(qu, "--index", sq.indices, "Token indices to copy");
        opt(qu, "--noise", sq.noise, "Noise scale");
        opt(qu, "--seed", sq.seed, "Random seed");
        cmds.push_back({qu, [&sq] { run_synth_query(sq); }, {"--tokens", "--out"}});

        auto *dd = s->add_subcommand("denoiser-data", "Latents with dense conditions and optional context");
        auto &sd = a.synth_denoiser;
        opt(dd, "--out-dir", sd.out_dir, "Output directory (manifest.json inside)");
        opt(dd, "--count", sd.count, "Samples");
        opt(dd, "--size", sd.size, "Latent height and width");
        opt(dd, "--channels", sd.channels, "Latent channels");
        opt(dd, "--context-dim", sd.context_dim, "Condition token width (0 = none)");
        opt(dd, "--seed", sd.seed, "Random seed");
        cmds.push_back({dd, [&sd] { run_synth_denoiser(sd); }, {"--out-dir"}});
    }
    for (auto &c : cmds) c.app->add_option("--config", config, "JSON file of option values (flags take precedence)");
    return cmds;
}

int
report(const char *kind, const std::string &msg, int code) {
    std::cerr << "error: kind=" << kind << " message=" << one_line(msg) << "\n";
    return code;
}

} // namespace

int
main(int argc, char **argv) {
    CLI::App app{"worldtok: Gaussian world tokenizer toolkit"};
    app.require_subcommand(1);
    std::string config;
    app.add_option("--config", config, "JSON file of option values (flags take precedence)");
    Args args;
    const auto cmds = register_commands(app, args, config);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        return report("usage", e.what(), kExitUsage);
    }

    try {
        const Command *cmd = nullptr;
        for (const auto &c : cmds) {
            if (c.app->parsed()) cmd = &c;
        }
        if (cmd == nullptr) usage("no subcommand selected");
        if (!config.empty()) {
            json cfg;
            try {
                cfg = json::parse(read_text(config));
            } catch (const json::parse_error &e) {
                usage(config + ": " + e.what());
            }
            apply_config(cmd->app, cfg, config);
        }
        for (const char *r : cmd->required) need(cmd->app, {r});
        cmd->run();
        return kExitOk;
    } catch (const UsageError &e) {
        return report("usage", e.what(), kExitUsage);
    } catch (const Error &e) {
        const int code = e.kind() == ErrorKind::NumericFailure ? kExitNumeric : kExitData;
        return report(std::string(to_string(e.kind())).c_str(), e.what(), code);
    } catch (const std::exception &e) {
        return report("internal", e.what(), kExitData);
    }
}

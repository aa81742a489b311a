// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0

#include "cli_support.hpp"
#include "test_support.hpp"

#include <worldtok/binary.hpp>
#include <worldtok/container.hpp>
#include <worldtok/dataset.hpp>
#include <worldtok/scene_io.hpp>

#include <gtest/gtest.h>

#include <filesystem>

namespace fs = std::filesystem;
using namespace worldtok;
using worldtok::testing::temp_dir;

namespace {

using worldtok::testing::RunResult;
using worldtok::testing::run_cli;
using worldtok::testing::tree_contents;

/// One pass over every subcommand; returns the stdout of each step.
std::vector<std::string>
pipeline(const fs::path &dir) {
    worldtok::testing::write_pipeline_inputs(dir);
    std::vector<std::string> outs;
    for (const auto &s : worldtok::testing::pipeline_steps()) {
        const RunResult r = run_cli(dir, s);
        EXPECT_EQ(r.code, 0) << s << "\n" << r.err;
        EXPECT_TRUE(r.err.empty()) << s;
        outs.push_back(r.out);
    }
    return outs;
}

} // namespace

TEST(Cli, EverySubcommandIsByteDeterministic) {
    const fs::path a = temp_dir("cli_run_a"), b = temp_dir("cli_run_b");
    const auto out_a = pipeline(a);
    const auto out_b = pipeline(b);
    EXPECT_EQ(out_a, out_b);
    const auto fa = tree_contents(a), fb = tree_contents(b);
    ASSERT_EQ(fa.size(), fb.size());
    for (const auto &[name, bytes] : fa) {
        ASSERT_TRUE(fb.count(name)) << name;
        EXPECT_TRUE(bytes == fb.at(name)) << name << " differs between runs";
    }
    // Spot checks on content.
    EXPECT_TRUE(fa.count("render/color.png"));
    EXPECT_TRUE(fa.count("spatial_rgb.png"));
    EXPECT_EQ(fa.at("qa.json"), read_text(std::string(WORLDTOK_TEST_DATA) + "/qa_record.json"));
    const auto report = nlohmann::json::parse(fa.at("filter_report.json"));
    EXPECT_EQ(report["kept"], nlohmann::json::array({"a"}));
    EXPECT_EQ(std::count(fa.at("hybrid.jsonl").begin(), fa.at("hybrid.jsonl").end(), '\n'), 9);
    EXPECT_TRUE(fa.at("fit.csv").starts_with("iteration,loss\n0,"));
}

TEST(Cli, TrainingLossDecreasesAndResumeMatchesUnbrokenRun) {
    const fs::path d = temp_dir("cli_resume");
    ASSERT_EQ(run_cli(d, "synth features --out f --count 12 --dim 10 --seed 1").code, 0);
    const std::string base = "train autoencoder --features f --hidden 8 --batch 4 --seed 5 ";
    ASSERT_EQ(run_cli(d, base + "--iters 80 --out full.ckpt --loss-csv full.csv").code, 0);
    ASSERT_EQ(run_cli(d, base + "--iters 30 --out half.ckpt --loss-csv a.csv").code, 0);
    ASSERT_EQ(run_cli(d, base + "--iters 50 --resume half.ckpt --out resumed.ckpt --loss-csv b.csv").code, 0);
    EXPECT_EQ(read_file(d / "full.ckpt"), read_file(d / "resumed.ckpt"));
    const std::string full = read_text(d / "full.csv");
    const std::string joined = read_text(d / "a.csv") + read_text(d / "b.csv").substr(std::string("iteration,loss\n").size());
    EXPECT_EQ(full, joined);

    const auto first_last = [](const std::string &csv) {
        std::vector<double> v;
        std::size_t pos = csv.find('\n') + 1;
        while (pos < csv.size()) {
            const auto comma = csv.find(',', pos), nl = csv.find('\n', pos);
            v.push_back(std::stod(csv.substr(comma + 1, nl - comma - 1)));
            pos = nl + 1;
        }
        return std::make_pair(v.front(), v.back());
    };
    const auto [l0, l1] = first_last(full);
    EXPECT_LT(l1, 0.5 * l0);
}

TEST(Cli, ExitCodesAndErrorLine) {
    const fs::path d = temp_dir("cli_errors");
    auto r = run_cli(d, "render --scene missing.gsw --camera c.json --out-dir o");
    EXPECT_EQ(r.code, 3);
    EXPECT_TRUE(r.err.starts_with("error: kind=io message=")) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

    EXPECT_EQ(run_cli(d, "render --scene s.gsw").code, 2);
    EXPECT_EQ(run_cli(d, "render --no-such-flag").code, 2);
    EXPECT_EQ(run_cli(d, "").code, 2);
    EXPECT_EQ(run_cli(d, "sample --tokens t --mode nearest").code, 2);

    write_text(d / "bad.json", "{\"clips\": [{\"poses\": [[0, 0, 0, 0, 0, 0, 1]]}]}");
    r = run_cli(d, "dataset trajectory --input bad.json --out t.jsonl");
    EXPECT_EQ(r.code, 3);
    EXPECT_TRUE(r.err.starts_with("error: kind=invariant_violation")) << r.err;
    write_text(d / "broken.json", "{\"token\": ");
    EXPECT_TRUE(run_cli(d, "dataset qa --input broken.json --out x").err.starts_with("error: kind=malformed_json"));

    ASSERT_EQ(run_cli(d, "synth denoiser-data --out-dir dn").code, 0);
    r = run_cli(d, "train denoiser --data dn/manifest.json --out x.ckpt --iters 50 --lr 1e9 --divergence 10");
    EXPECT_EQ(r.code, 4);
    EXPECT_TRUE(r.err.starts_with("error: kind=numeric_failure")) << r.err;
}

TEST(Cli, EmptySceneIsRejected) {
    const fs::path d = temp_dir("cli_empty");
    ASSERT_EQ(run_cli(d, "synth scene --out s.gsw --camera-out cam.json --count 3").code, 0);
    // The library cannot build an empty scene, so write the container by hand.
    Container c;
    c.add_json({{"scene_id", "empty"},
                {"count", 0},
                {"lang_dim", 3},
                {"lang_levels", 1},
                {"bounds", {{"lo", {0, 0, 0}}, {"hi", {0, 0, 0}}}}});
    c.add("PRIM", {});
    c.save(d / "empty.gsw");
    const auto r = run_cli(d, "render --scene empty.gsw --camera cam.json --out-dir o");
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_TRUE(r.err.starts_with("error: kind=invariant_violation")) << r.err;
    EXPECT_FALSE(fs::exists(d / "o"));
}

TEST(Cli, ConfigPrecedenceFlagsOverConfigOverDefaults) {
    const fs::path d = temp_dir("cli_config");
    ASSERT_EQ(run_cli(d, "synth features --out f --count 6 --dim 8").code, 0);
    write_text(d / "cfg.json", R"({"iters": 12, "hidden": [5], "loss_csv": "cfg.csv"})");
    ASSERT_EQ(run_cli(d, "train autoencoder --config cfg.json --features f --out a.ckpt").code, 0);
    auto r = run_cli(d, "train autoencoder --features f --out b.ckpt --iters 3 --config cfg.json");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["iteration"], 3);
    const std::string csv = read_text(d / "cfg.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    r = run_cli(d, "train autoencoder --features f --out c.ckpt");
    EXPECT_EQ(nlohmann::json::parse(r.out)["iteration"], 2000);

    write_text(d / "unknown.json", R"({"iterations": 12})");
    EXPECT_EQ(run_cli(d, "train autoencoder --config unknown.json --features f --out d.ckpt").code, 2);
    write_text(d / "badval.json", R"({"lr": -1})");
    EXPECT_EQ(run_cli(d, "train autoencoder --config badval.json --features f --out d.ckpt").code, 2);
    write_text(d / "required.json", R"({"features": "f", "out": "e.ckpt", "iters": 1})");
    EXPECT_EQ(run_cli(d, "train autoencoder --config required.json").code, 0);
}

TEST(Cli, HelpListsEveryFlag) {
    const fs::path d = temp_dir("cli_help");
    const auto r = run_cli(d, "train denoiser --help");
    EXPECT_EQ(r.code, 0);
    for (const char *flag : {"--data", "--out", "--resume", "--loss-csv", "--schedule", "--steps", "--hidden",
                             "--time-bands", "--eval-draws", "--init-seed", "--iters", "--lr", "--seed", "--fixed-t",
                             "--t-min", "--t-max", "--divergence", "--config"}) {
        EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
    }
}

TEST(Cli, TrajectoryListingRebuildsFromPoses) {
    const fs::path d = temp_dir("cli_traj");
    const auto turns = parse_conversations(read_text(std::string(WORLDTOK_TEST_DATA) + "/trajectory_conversations.txt"));
    auto rows = parse_pose_rows(find_pose_text(turns[0].value));
    for (const auto &r : parse_pose_rows(turns[1].value)) rows.push_back(r);
    nlohmann::json clip = {{"token", "listing"}, {"poses", rows}};
    write_text(d / "clips.json", nlohmann::json{{"clips", {clip}}}.dump());
    ASSERT_EQ(run_cli(d, "dataset trajectory --input clips.json --out frag.txt --format fragment").code, 0);
    EXPECT_EQ(read_text(d / "frag.txt"), read_text(std::string(WORLDTOK_TEST_DATA) + "/trajectory_conversations.txt"));
}

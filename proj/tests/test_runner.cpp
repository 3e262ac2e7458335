#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "recon/checkpoint.hpp"
#include "recon/runner.hpp"
#include "test_support.hpp"

using namespace recon;
namespace fs = std::filesystem;

namespace {

// Desk-scale-but-fast configuration for episode tests.
RunConfig tiny_run_config() {
    RunConfig cfg;
    cfg.scene = "room1";
    cfg.steps = 20;
    cfg.seed = 3;
    cfg.camera = {60, 34, 60.0, 90.0, 0.05, 10.0};
    cfg.map.levels = 4;
    cfg.map.log2_table = 11;
    cfg.map.res_min = 8;
    cfg.map.res_max = 64;
    cfg.map.mlp_width = 16;
    cfg.map.h_dim = 7;
    cfg.ba.n_iters = 3;
    cfg.ba.batch_size = 256;
    cfg.ba.min_current = 32;
    cfg.ba.smooth_samples = 64;
    cfg.top_k = 100;
    cfg.out_dir = "";
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("parse_run_config: values, overrides, comments, unknown keys") {
    std::string text = R"(
# episode setup
scene = "rooms3"
steps = 1500
seed = 11
sampling = "random"
uncertainty = "net"
planner = "random-walk"
lambda_c = 2.5
map_every_step = true
out = "run_out"  # trailing comment
)";
    RunConfig cfg = parse_run_config(text);
    CHECK(cfg.scene == "rooms3");
    CHECK(cfg.steps == 1500);
    CHECK(cfg.seed == 11);
    CHECK(cfg.sampler == SamplerMode::Random);
    CHECK(cfg.map.uncertainty_mode == UncertaintyMode::Net);
    CHECK(cfg.planner == PlannerKind::RandomWalk);
    CHECK(cfg.ba.weights.c == 2.5);
    CHECK(cfg.map_every_step);
    CHECK(cfg.out_dir == "run_out");

    CHECK_THROWS_WITH_AS(parse_run_config("bogus_key = 1\n"),
                         doctest::Contains("bogus_key"), std::runtime_error);
    CHECK_THROWS_AS(parse_run_config("steps 100\n"), std::runtime_error);
    CHECK_THROWS_AS(parse_run_config("planner = \"fancy\"\n"), std::runtime_error);
}

TEST_CASE("run config defaults match the documented interface") {
    RunConfig cfg;
    CHECK(cfg.steps == 2000);
    CHECK(cfg.keyframe_interval == 5);
    CHECK(cfg.ba.batch_size == 2148);
    CHECK(cfg.ba.n_iters == 10);
    CHECK(cfg.ba.min_current == 100);
    CHECK(cfg.map.trunc == 0.1);
    CHECK(cfg.map.u_voxel == 0.1);
    CHECK(cfg.top_k == 300);
    CHECK(cfg.camera.fov_v_deg == 60.0);
    CHECK(cfg.camera.fov_h_deg == 90.0);
    CHECK(cfg.rrt_max_iterations == 4000);
    RunConfig bad = cfg;
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint: save/load round trip reproduces queries bit-exactly") {
    MapConfig mc;
    mc.bounds = {{-2, -2, -2}, {2, 2, 2}};
    mc.levels = 3;
    mc.log2_table = 9;
    mc.res_min = 8;
    mc.res_max = 32;
    mc.mlp_width = 16;
    mc.h_dim = 7;
    mc.u_voxel = 0.25;
    MapModel map = init_map(mc, 21);
    // Perturb state so the roundtrip is non-trivial.
    Rng rng(9);
    for (auto& p : map.params) p += static_cast<float>(rng.uniform(-0.01, 0.01));
    map.observed[17] = 1;
    map.unreachable[3] = 1;
    OptimState optim = init_optim(map, AdamConfig{});
    optim.step = 42;
    for (auto& m : optim.m) m = static_cast<float>(rng.uniform(-1, 1));

    TempDir tmp("recon_ckpt_test");
    std::string path = (tmp.path / "map.ckpt").string();
    save_checkpoint(map, optim, path);
    Checkpoint ck = load_checkpoint(path);

    CHECK(ck.map.params == map.params);
    CHECK(ck.map.observed == map.observed);
    CHECK(ck.map.unreachable == map.unreachable);
    CHECK(ck.optim.m == optim.m);
    CHECK(ck.optim.step == 42);

    Rng prng(31);
    for (int i = 0; i < 1000; ++i) {
        Vec3 x{prng.uniform(-2, 2), prng.uniform(-2, 2), prng.uniform(-2, 2)};
        double a = query_sdf(map, x);
        double b = query_sdf(ck.map, x);
        CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
    }
}

TEST_CASE("checkpoint: dimension mismatches and truncation are rejected") {
    MapConfig mc;
    mc.bounds = {{-1, -1, -1}, {1, 1, 1}};
    mc.levels = 2;
    mc.log2_table = 8;
    mc.res_min = 4;
    mc.res_max = 8;
    mc.mlp_width = 8;
    mc.h_dim = 7;
    mc.u_voxel = 0.5;
    MapModel map = init_map(mc, 5);
    OptimState optim = init_optim(map, AdamConfig{});
    TempDir tmp("recon_ckpt_bad");
    std::string path = (tmp.path / "map.ckpt").string();
    save_checkpoint(map, optim, path);

    // Truncated file: drop the tail.
    std::string data = slurp(path);
    std::string cut = data.substr(0, data.size() - 64);
    std::string trunc_path = (tmp.path / "trunc.ckpt").string();
    std::ofstream(trunc_path, std::ios::binary) << cut;
    CHECK_THROWS_WITH_AS(load_checkpoint(trunc_path), doctest::Contains("truncated"),
                         std::runtime_error);

    // Corrupt a declared array count: the error names the array.
    std::string bad = data;
    size_t pos = bad.find("\"name\":\"usigma.raw\"");
    REQUIRE(pos != std::string::npos);
    size_t cpos = bad.rfind("\"count\":", pos);
    REQUIRE(cpos != std::string::npos);
    bad[cpos + 8] = '9';
    std::string bad_path = (tmp.path / "bad.ckpt").string();
    std::ofstream(bad_path, std::ios::binary) << bad;
    CHECK_THROWS_AS(load_checkpoint(bad_path), std::runtime_error);

    CHECK_THROWS_AS(load_checkpoint((tmp.path / "missing.ckpt").string()), std::runtime_error);
}

TEST_CASE("run_episode: rejects T = 0") {
    RunConfig cfg = tiny_run_config();
    cfg.steps = 0;
    CHECK_THROWS_AS(run_episode(cfg), std::invalid_argument);
}

TEST_CASE("run_episode: smoke run logs, keyframe cadence, collision-free audit") {
    RunConfig cfg = tiny_run_config();
    RunResult res = run_episode(cfg);
    CHECK(!res.log.aborted);
    REQUIRE(res.log.steps.size() == 20);

    // Keyframe cadence: loss rows exactly at steps == 0 mod 5.
    std::set<int> loss_steps;
    for (const auto& row : res.log.losses) loss_steps.insert(row.step);
    CHECK(loss_steps == std::set<int>{0, 5, 10, 15});

    // Every logged state is collision-free under the scene oracle and
    // consecutive states respect the motion limits.
    for (size_t i = 0; i < res.log.steps.size(); ++i) {
        const AgentState& st = res.log.steps[i].state;
        CHECK(scene_sdf(res.scene, st.pos) >= 0.05 - 1e-9);
        if (i > 0) {
            const AgentState& prev = res.log.steps[i - 1].state;
            CHECK(norm(st.pos - prev.pos) <= AgentState::kMaxStep + 1e-9);
            CHECK(rad_to_deg(quat_angle(st.rot, prev.rot)) <= AgentState::kMaxRotDeg + 1e-6);
        }
    }
    CHECK(res.metrics.gt_vertices > 0);
}

TEST_CASE("run_episode + export_run: artifacts exist, parse, and round trip") {
    RunConfig cfg = tiny_run_config();
    cfg.steps = 30;
    RunResult res = run_episode(cfg);
    TempDir tmp("recon_export_test");
    export_run(res, cfg, tmp.path.string());

    for (const char* name : {"mesh.ply", "culled_mesh.ply", "trajectory.jsonl",
                             "uncertainty.csv", "losses.csv", "metrics.json"})
        CHECK(fs::exists(tmp.path / name));

    // metrics.json parses and matches the in-memory report.
    auto metrics = nlohmann::json::parse(slurp(tmp.path / "metrics.json"));
    CHECK(metrics["comp_ratio_pct"].get<double>() ==
          doctest::Approx(res.metrics.comp_ratio_pct));
    CHECK(metrics["steps"].get<int>() == 30);

    // mesh.ply round trip preserves the vertex count.
    TriangleMesh reloaded = load_ply((tmp.path / "mesh.ply").string());
    CHECK(reloaded.vertices.size() == res.mesh.vertices.size());
    CHECK(reloaded.triangles.size() == res.mesh.triangles.size());

    // trajectory.jsonl lines parse as planner events.
    std::ifstream traj(tmp.path / "trajectory.jsonl");
    std::string line;
    int events = 0;
    while (std::getline(traj, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("step"));
        CHECK(j.contains("event"));
        ++events;
    }
    CHECK(events == static_cast<int>(res.log.events.size()));

    // uncertainty.csv rows: replanning checkpoints + final.
    std::ifstream unc(tmp.path / "uncertainty.csv");
    int rows = -1;  // header
    while (std::getline(unc, line))
        if (!line.empty()) ++rows;
    CHECK(rows == static_cast<int>(res.log.checkpoints.size()));
    CHECK(rows >= 2);  // at least the first plan and the final row
}

TEST_CASE("run_episode: deterministic artifacts for a fixed seed") {
    RunConfig cfg = tiny_run_config();
    cfg.steps = 12;
    TempDir ta("recon_det_a"), tb("recon_det_b");
    RunResult ra = run_episode(cfg);
    export_run(ra, cfg, ta.path.string());
    RunResult rb = run_episode(cfg);
    export_run(rb, cfg, tb.path.string());
    for (const char* name : {"mesh.ply", "metrics.json", "uncertainty.csv", "losses.csv",
                             "steps.csv"})
        CHECK(slurp(ta.path / name) == slurp(tb.path / name));
}

TEST_CASE("replay_mapping: fixed trajectory improves geometry near viewed walls") {
    RunConfig cfg = tiny_run_config();
    cfg.steps = 40;
    std::vector<Pose> traj;
    for (int i = 0; i < 40; ++i) {
        double ang = 2.0 * M_PI * i / 40.0;
        Vec3 pos{0.6 * std::cos(ang), 0.6 * std::sin(ang), 1.4};
        Vec3 at{2.0 * std::cos(ang), 2.0 * std::sin(ang), 1.2};
        traj.push_back({pos, look_at(pos, at)});
    }
    RunResult res = replay_mapping(cfg, traj);
    CHECK(!res.log.aborted);
    CHECK(res.log.losses.size() == 8 * cfg.ba.n_iters);  // keyframes at 0,5,...,35
    CHECK(res.metrics.comp_ratio_pct > 0.0);
}

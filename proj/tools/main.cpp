#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "recon/checkpoint.hpp"
#include "recon/metrics.hpp"
#include "recon/planner.hpp"
#include "recon/runner.hpp"
#include "recon/sim_render.hpp"

using namespace recon;

namespace {

int cmd_run(const std::string& scene, const std::string& config_path, int steps, int64_t seed,
            std::string out_dir, const std::string& uncertainty, const std::string& sampling,
            const std::string& planner, bool map_every_step) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path, cfg);
    // CLI flags override file values.
    if (!scene.empty()) cfg.scene = scene;
    if (steps > 0) cfg.steps = steps;
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!uncertainty.empty())
        cfg.map.uncertainty_mode = uncertainty == "net" ? UncertaintyMode::Net
                                                        : UncertaintyMode::Grid;
    if (!sampling.empty())
        cfg.sampler = sampling == "random" ? SamplerMode::Random : SamplerMode::Mixed;
    if (!planner.empty())
        cfg.planner = planner == "random-walk" ? PlannerKind::RandomWalk : PlannerKind::Active;
    if (map_every_step) cfg.map_every_step = true;
    if (const char* env = std::getenv("ACTIVE_RECON_OUT")) cfg.out_dir = env;

    std::printf("scene=%s steps=%d seed=%llu out=%s\n", cfg.scene.c_str(), cfg.steps,
                static_cast<unsigned long long>(cfg.seed), cfg.out_dir.c_str());
    RunResult result = run_episode(cfg);
    export_run(result, cfg, cfg.out_dir);
    save_checkpoint(result.map, result.optim,
                    (std::filesystem::path(cfg.out_dir) / "map.ckpt").string());
    std::printf("comp_ratio=%.2f%% acc=%.2fcm comp=%.2fcm mad=%.2fcm\n",
                result.metrics.comp_ratio_pct, result.metrics.acc_cm, result.metrics.comp_cm,
                result.metrics.mad_cm);
    if (result.log.aborted) {
        std::fprintf(stderr, "run aborted: %s\n", result.log.error.c_str());
        return 2;
    }
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path) {
    TriangleMesh pred = load_ply(pred_path);
    TriangleMesh gt = load_ply(gt_path);
    MeshDistances d = mesh_metrics(pred, gt);
    nlohmann::json j{{"acc_cm", 100.0 * d.acc_m},
                     {"comp_cm", 100.0 * d.comp_m},
                     {"comp_ratio_pct", d.comp_ratio_pct},
                     {"pred_vertices", pred.vertices.size()},
                     {"gt_vertices", gt.vertices.size()}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_plan_bench(const std::string& scene_name, int trials, uint64_t seed, bool vanilla,
                   const std::string& out_path) {
    SdfScene scene = resolve_scene(scene_name);
    ScalarGrid vs = build_sdf_volume_oracle(scene, scene.bounds, 0.1);
    Rng rng(seed, 21);

    auto draw_free = [&]() {
        for (int t = 0; t < 100000; ++t) {
            Vec3 p{rng.uniform(scene.bounds.min.x, scene.bounds.max.x),
                   rng.uniform(scene.bounds.min.y, scene.bounds.max.y),
                   rng.uniform(scene.bounds.min.z, scene.bounds.max.z)};
            if (scene_sdf(scene, p) >= 0.15) return p;
        }
        throw std::runtime_error("plan-bench: no free space found");
    };

    std::string csv = "trial,iters,nodes,path_len,success\n";
    for (int t = 0; t < trials; ++t) {
        Vec3 start = draw_free();
        Vec3 goal = draw_free();
        RrtParams params;
        params.vanilla = vanilla;
        params.max_iterations = vanilla ? 60000 : 4000;
        params.seed = Rng::splitmix(seed ^ (0x9E3779B97F4A7C15ULL * (t + 1)));
        PlanResult res = plan_path(vs, start, goal, params);
        csv += std::to_string(t) + "," + std::to_string(res.iterations) + "," +
               std::to_string(res.nodes) + "," + std::to_string(res.path.length) + "," +
               (res.reached ? "1" : "0") + "\n";
        std::printf("trial %d: %s iters=%d nodes=%d len=%.2f\n", t,
                    res.reached ? "ok" : "FAIL", res.iterations, res.nodes, res.path.length);
    }
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("plan-bench: cannot open " + out_path);
    f << csv;
    return 0;
}

int cmd_gt_mesh(const std::string& scene_name, double voxel, const std::string& out_path) {
    SdfScene scene = resolve_scene(scene_name);
    TriangleMesh mesh = extract_gt_mesh(scene, voxel);
    save_ply(mesh, out_path);
    std::printf("wrote %zu vertices, %zu triangles to %s\n", mesh.vertices.size(),
                mesh.triangles.size(), out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Active neural surface reconstruction on synthetic SDF scenes"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Run an active reconstruction episode");
    std::string scene, config_path, out_dir, uncertainty, sampling, planner;
    int steps = 0;
    int64_t seed = -1;
    bool map_every_step = false;
    run->add_option("--scene", scene, "Bundled scene name (room1|rooms3|loop) or JSON path");
    run->add_option("--config", config_path, "Key/value config file");
    run->add_option("--steps", steps, "Episode length");
    run->add_option("--seed", seed, "RNG seed");
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--uncertainty", uncertainty, "grid|net")
        ->check(CLI::IsMember({"grid", "net"}));
    run->add_option("--sampling", sampling, "mixed|random")
        ->check(CLI::IsMember({"mixed", "random"}));
    run->add_option("--planner", planner, "naruto|random-walk")
        ->check(CLI::IsMember({"naruto", "random-walk"}));
    run->add_flag("--map-every-step", map_every_step, "Run mapping at every step");

    // eval
    auto* eval = app.add_subcommand("eval", "Compare a predicted mesh against ground truth");
    std::string pred_path, gt_path;
    eval->add_option("--pred", pred_path, "Predicted mesh (PLY)")->required();
    eval->add_option("--gt", gt_path, "Ground-truth mesh (PLY)")->required();

    // plan-bench
    auto* bench = app.add_subcommand("plan-bench", "Path-planning benchmark");
    std::string bench_scene = "rooms3", bench_out = "rrt_bench.csv";
    int trials = 20;
    uint64_t bench_seed = 0;
    bool vanilla = false;
    bench->add_option("--scene", bench_scene, "Scene name or path");
    bench->add_option("--trials", trials, "Number of start/goal pairs");
    bench->add_option("--seed", bench_seed, "RNG seed");
    bench->add_flag("--vanilla", vanilla, "Reference RRT (no direct line, single-node extension)");
    bench->add_option("--out", bench_out, "Output CSV path");

    // gt-mesh
    auto* gtm = app.add_subcommand("gt-mesh", "Extract the ground-truth scene mesh");
    std::string gtm_scene = "room1", gtm_out = "gt_mesh.ply";
    double voxel = 0.05;
    gtm->add_option("--scene", gtm_scene, "Scene name or path");
    gtm->add_option("--voxel", voxel, "Marching-cubes voxel size (m)");
    gtm->add_option("--out", gtm_out, "Output PLY path");

    CLI11_PARSE(app, argc, argv);
    try {
        if (run->parsed())
            return cmd_run(scene, config_path, steps, seed, out_dir, uncertainty, sampling,
                           planner, map_every_step);
        if (eval->parsed()) return cmd_eval(pred_path, gt_path);
        if (bench->parsed())
            return cmd_plan_bench(bench_scene, trials, bench_seed, vanilla, bench_out);
        if (gtm->parsed()) return cmd_gt_mesh(gtm_scene, voxel, gtm_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

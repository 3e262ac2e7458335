#include "recon/runner.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "recon/sim_render.hpp"

namespace recon {

void RunConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("run config: steps must be >= 1");
    if (keyframe_interval < 1)
        throw std::invalid_argument("run config: keyframe_interval must be >= 1");
    camera.validate();
    if (!(volume_voxel > 0.0) || !(eval_voxel > 0.0))
        throw std::invalid_argument("run config: voxel sizes must be positive");
    if (top_k < 1) throw std::invalid_argument("run config: top_k must be >= 1");
}

// ---------------------------------------------------------------------------
// Config file parsing (flat TOML-style key = value)
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

struct KvLine {
    std::string key;
    std::string value;
};

std::vector<KvLine> parse_kv(const std::string& text) {
    std::vector<KvLine> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Strip comments outside quotes.
        bool in_quote = false;
        std::string stripped;
        for (char ch : line) {
            if (ch == '"') in_quote = !in_quote;
            if (ch == '#' && !in_quote) break;
            stripped += ch;
        }
        stripped = trim(stripped);
        if (stripped.empty()) continue;
        size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     " is not 'key = value'");
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        out.push_back({key, value});
    }
    return out;
}

double to_double(const KvLine& kv) {
    try {
        size_t pos;
        double v = std::stod(kv.value, &pos);
        if (pos != kv.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw std::runtime_error("config: key '" + kv.key + "' expects a number");
    }
}

int to_int(const KvLine& kv) { return static_cast<int>(std::llround(to_double(kv))); }

bool to_bool(const KvLine& kv) {
    if (kv.value == "true") return true;
    if (kv.value == "false") return false;
    throw std::runtime_error("config: key '" + kv.key + "' expects true/false");
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const RunConfig& base) {
    RunConfig cfg = base;
    for (const auto& kv : parse_kv(text)) {
        const std::string& k = kv.key;
        if (k == "scene") cfg.scene = kv.value;
        else if (k == "steps") cfg.steps = to_int(kv);
        else if (k == "keyframe_interval") cfg.keyframe_interval = to_int(kv);
        else if (k == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(kv.value));
        else if (k == "out") cfg.out_dir = kv.value;
        else if (k == "cam_width") cfg.camera.width = to_int(kv);
        else if (k == "cam_height") cfg.camera.height = to_int(kv);
        else if (k == "fov_v") cfg.camera.fov_v_deg = to_double(kv);
        else if (k == "fov_h") cfg.camera.fov_h_deg = to_double(kv);
        else if (k == "near") cfg.camera.near = to_double(kv);
        else if (k == "far") cfg.camera.far = to_double(kv);
        else if (k == "n_bins") cfg.map.n_bins = to_int(kv);
        else if (k == "levels") cfg.map.levels = to_int(kv);
        else if (k == "feats_per_level") cfg.map.feats_per_level = to_int(kv);
        else if (k == "log2_table") cfg.map.log2_table = to_int(kv);
        else if (k == "res_min") cfg.map.res_min = to_int(kv);
        else if (k == "res_max") cfg.map.res_max = to_int(kv);
        else if (k == "h_dim") cfg.map.h_dim = to_int(kv);
        else if (k == "mlp_width") cfg.map.mlp_width = to_int(kv);
        else if (k == "mlp_depth") cfg.map.mlp_depth = to_int(kv);
        else if (k == "trunc") cfg.map.trunc = to_double(kv);
        else if (k == "u_voxel") cfg.map.u_voxel = to_double(kv);
        else if (k == "sigma_raw_init") cfg.map.sigma_raw_init = to_double(kv);
        else if (k == "uncertainty") {
            if (kv.value == "grid") cfg.map.uncertainty_mode = UncertaintyMode::Grid;
            else if (kv.value == "net") cfg.map.uncertainty_mode = UncertaintyMode::Net;
            else throw std::runtime_error("config: uncertainty must be grid|net");
        } else if (k == "sampling") {
            if (kv.value == "mixed") cfg.sampler = SamplerMode::Mixed;
            else if (kv.value == "random") cfg.sampler = SamplerMode::Random;
            else throw std::runtime_error("config: sampling must be mixed|random");
        } else if (k == "planner") {
            if (kv.value == "naruto") cfg.planner = PlannerKind::Active;
            else if (kv.value == "random-walk") cfg.planner = PlannerKind::RandomWalk;
            else throw std::runtime_error("config: planner must be naruto|random-walk");
        } else if (k == "collision") {
            if (kv.value == "sdf") cfg.collision = CollisionMode::Sdf;
            else if (kv.value == "panorama") cfg.collision = CollisionMode::Panorama;
            else throw std::runtime_error("config: collision must be sdf|panorama");
        }
        else if (k == "lambda_c") cfg.ba.weights.c = to_double(kv);
        else if (k == "lambda_d") cfg.ba.weights.d = to_double(kv);
        else if (k == "lambda_sdf") cfg.ba.weights.sdf = to_double(kv);
        else if (k == "lambda_fs") cfg.ba.weights.fs = to_double(kv);
        else if (k == "lambda_smooth") cfg.ba.weights.smooth = to_double(kv);
        else if (k == "batch_size") cfg.ba.batch_size = to_int(kv);
        else if (k == "ba_iters") cfg.ba.n_iters = to_int(kv);
        else if (k == "lr_grid") cfg.adam.lr_grid = to_double(kv);
        else if (k == "lr_decoder") cfg.adam.lr_decoder = to_double(kv);
        else if (k == "lr_sigma_raw") cfg.adam.lr_sigma_raw = to_double(kv);
        else if (k == "map_every_step") cfg.map_every_step = to_bool(kv);
        else if (k == "xy_stride") cfg.goal_xy_stride = to_double(kv);
        else if (k == "layer_gap") cfg.goal_layer_gap = to_double(kv);
        else if (k == "top_k") cfg.top_k = to_int(kv);
        else if (k == "volume_voxel") cfg.volume_voxel = to_double(kv);
        else if (k == "eval_voxel") cfg.eval_voxel = to_double(kv);
        else if (k == "rrt_max_iterations") cfg.rrt_max_iterations = to_int(kv);
        else if (k == "observe_targets") cfg.observe_targets = to_int(kv);
        else throw std::runtime_error("config: unknown key '" + k + "'");
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), base);
}

// ---------------------------------------------------------------------------
// Episode
// ---------------------------------------------------------------------------

namespace {

struct EpisodeState {
    RunConfig cfg;
    SdfScene scene;
    MapModel map;
    OptimState optim;
    KeyframeDB db;
    Rng rng_spawn, rng_ba, rng_planner, rng_walk;
    AgentState agent;
    PolicyState policy;
    GoalSpace goal_space;
    ScalarGrid vs;
    UncertaintySnapshot usnap;
    std::vector<UVertexScore> topk;
    TriangleMesh gt_mesh;
    VertexIndex* gt_index = nullptr;
    double cached_sum_sigma2 = 0.0;
    double last_loss_total = 0.0;

    EpisodeState(const RunConfig& c, const SdfScene& s)
        : cfg(c),
          scene(s),
          db(c.seed),
          rng_spawn(c.seed, 1),
          rng_ba(c.seed, 2),
          rng_planner(c.seed, 4),
          rng_walk(c.seed, 5) {}
};

Quat random_yaw(Rng& rng) {
    double ang = rng.uniform(0.0, 2.0 * M_PI);
    return quat_from_axis_angle({0, 0, 1}, ang);
}

AgentState spawn_agent(const SdfScene& scene, Rng& rng) {
    const Aabb& r = scene.spawn_region;
    for (int tries = 0; tries < 1000; ++tries) {
        Vec3 p{rng.uniform(r.min.x, r.max.x), rng.uniform(r.min.y, r.max.y),
               rng.uniform(r.min.z, r.max.z)};
        if (scene_sdf(scene, p) >= AgentState::kRadius) return {p, random_yaw(rng)};
    }
    throw std::runtime_error("run_episode: could not find a collision-free spawn");
}

// Uniform random feasible unit action with the same step limits.
ProposedAction random_walk_action(const AgentState& agent, const SdfScene& scene, Rng& rng) {
    for (int tries = 0; tries < 50; ++tries) {
        // Uniform direction on the sphere.
        double z = rng.uniform(-1.0, 1.0);
        double phi = rng.uniform(0.0, 2.0 * M_PI);
        double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
        Vec3 dir{rxy * std::cos(phi), rxy * std::sin(phi), z};
        Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        if (norm(axis) < 1e-9) axis = {0, 0, 1};
        double ang = rng.uniform(0.0, deg_to_rad(AgentState::kMaxRotDeg));
        ProposedAction act;
        act.type = ActionType::Move;
        act.next.pos = agent.pos + dir * AgentState::kMaxStep;
        act.next.rot = (quat_from_axis_angle(axis, ang) * agent.rot).normalized();
        if (!scene.bounds.contains(act.next.pos)) continue;
        if (check_collision_scene(scene, agent.pos, act.next.pos)) continue;
        return act;
    }
    ProposedAction stay;
    stay.type = ActionType::Stay;
    stay.next = agent;
    return stay;
}

void refresh_planner_snapshots(EpisodeState& ep, RunLog& log, bool with_checkpoint_row) {
    ep.vs = build_sdf_volume(ep.map, ep.scene.bounds, ep.cfg.volume_voxel);
    ep.usnap = snapshot_uncertainty(ep.map);
    ep.topk = top_k_uncertain(ep.usnap, ep.cfg.top_k, ep.rng_planner.next_u64());
    mark_goal_feasibility(ep.goal_space, ep.vs, AgentState::kRadius);
    ep.cached_sum_sigma2 = sum_sigma2(ep.usnap);
    if (with_checkpoint_row) {
        TriangleMesh mesh = marching_cubes(ep.vs);
        TriangleMesh culled = cull_mesh(mesh, ep.map.layout.ugrid, ep.map.observed,
                                        ep.scene.bounds);
        MeshDistances d = mesh_metrics(culled, ep.gt_mesh);
        log.checkpoints.push_back({static_cast<int>(log.steps.size()),
                                   std::log(std::max(1e-300, ep.cached_sum_sigma2)),
                                   d.comp_ratio_pct});
    }
}

void keyframe_update(EpisodeState& ep, RunLog& log, int step) {
    RGBDFrame frame = render_rgbd(ep.scene, ep.cfg.camera, {ep.agent.pos, ep.agent.rot});
    ep.db.insert_keyframe(frame, ep.cfg.camera, step);
    BaConfig ba = ep.cfg.ba;
    ba.sampling.near = ep.cfg.camera.near;
    ba.sampling.far = ep.cfg.camera.far;
    BaResult res = ba_step(ep.map, ep.db, ep.cfg.sampler, ep.optim, ba, ep.rng_ba);
    for (size_t i = 0; i < res.history.size(); ++i)
        log.losses.push_back({step, static_cast<int>(i), res.history[i]});
    if (!res.history.empty()) ep.last_loss_total = res.history.back().total;
    for (const auto& ev : res.events)
        log.events.push_back({"warn", step, {}, 0, 0, 0, ev.message});
    // Sigma changed: refresh the cached sum used by per-step records.
    ep.cached_sum_sigma2 = sum_sigma2(snapshot_uncertainty(ep.map));
}

void finalize(EpisodeState& ep, RunResult& out) {
    ep.vs = build_sdf_volume(ep.map, ep.scene.bounds, ep.cfg.volume_voxel);
    out.mesh = marching_cubes(ep.vs);
    // Vertex colors from the color decoder.
    out.mesh.colors.resize(out.mesh.vertices.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(out.mesh.vertices.size()); ++i) {
        Vec3 c = query_color(ep.map, out.mesh.vertices[i]);
        out.mesh.colors[i] = {static_cast<uint8_t>(std::lround(255.0 * c.x)),
                              static_cast<uint8_t>(std::lround(255.0 * c.y)),
                              static_cast<uint8_t>(std::lround(255.0 * c.z))};
    }
    out.culled_mesh = cull_mesh(out.mesh, ep.map.layout.ugrid, ep.map.observed, ep.scene.bounds);
    MeshDistances d = mesh_metrics(out.culled_mesh, ep.gt_mesh);
    out.metrics.acc_cm = 100.0 * d.acc_m;
    out.metrics.comp_cm = 100.0 * d.comp_m;
    out.metrics.comp_ratio_pct = d.comp_ratio_pct;
    out.metrics.mad_cm = ep.gt_mesh.vertices.empty() ? 0.0 : sdf_mad(ep.map, ep.gt_mesh);
    out.metrics.pred_vertices = out.culled_mesh.vertices.size();
    out.metrics.gt_vertices = ep.gt_mesh.vertices.size();
    out.log.checkpoints.push_back({ep.cfg.steps, std::log(std::max(1e-300, sum_sigma2(snapshot_uncertainty(ep.map)))),
                                   d.comp_ratio_pct});
}

}  // namespace

RunResult run_episode(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    SdfScene scene = resolve_scene(cfg.scene);
    cfg.map.bounds = scene.bounds;
    cfg.ba.sampling.near = cfg.camera.near;
    cfg.ba.sampling.far = cfg.camera.far;

    EpisodeState ep(cfg, scene);
    ep.map = init_map(cfg.map, cfg.seed);
    ep.optim = init_optim(ep.map, cfg.adam);
    ep.agent = spawn_agent(scene, ep.rng_spawn);
    ep.goal_space = build_goal_space(scene.bounds, cfg.goal_xy_stride, cfg.goal_layer_gap);
    ep.gt_mesh = extract_gt_mesh(scene, cfg.eval_voxel);

    RunResult out;
    out.scene = scene;
    RunLog& log = out.log;

    PlannerContext ctx;
    ctx.rrt.max_iterations = cfg.rrt_max_iterations;
    ctx.rng = &ep.rng_planner;
    ctx.events = &log.events;

    try {
        for (int step = 0; step < cfg.steps; ++step) {
            ctx.step = step;
            ProposedAction action;
            if (cfg.planner == PlannerKind::Active) {
                if (ep.policy.mode == PolicyMode::NeedPlan)
                    refresh_planner_snapshots(ep, log, /*with_checkpoint_row=*/true);
                ctx.vs = &ep.vs;
                ctx.usnap = &ep.usnap;
                ctx.topk = &ep.topk;
                ctx.goal_space = &ep.goal_space;
                ctx.map = &ep.map;
                if (ep.topk.empty()) {
                    action.type = ActionType::Stay;
                    action.next = ep.agent;
                } else {
                    action = next_action(ep.policy, ep.agent, ctx);
                }
            } else {
                action = random_walk_action(ep.agent, scene, ep.rng_walk);
            }

            // Simulator physics: the world vetoes colliding motion.
            bool collided = false;
            if (action.type == ActionType::Move) {
                collided = check_collision_scene(scene, ep.agent.pos, action.next.pos);
                if (!collided && cfg.collision == CollisionMode::Panorama)
                    collided = check_collision_panorama(scene, ep.vs, ep.agent.pos,
                                                        action.next.pos);
            }
            if (collided) {
                if (cfg.planner == PlannerKind::Active) on_collision(ep.policy, ctx);
                action.type = ActionType::Stay;
                action.next = ep.agent;
            }
            ep.agent = action.next;

            bool keyframe = (step % cfg.keyframe_interval) == 0;
            if (keyframe || cfg.map_every_step) keyframe_update(ep, log, step);

            log.steps.push_back({step, ep.agent, action.type, ep.cached_sum_sigma2,
                                 ep.last_loss_total});
        }
    } catch (const std::exception& e) {
        log.aborted = true;
        log.error = e.what();
    }

    finalize(ep, out);
    out.map = std::move(ep.map);
    out.optim = std::move(ep.optim);
    out.gt_mesh = std::move(ep.gt_mesh);
    return out;
}

RunResult replay_mapping(const RunConfig& cfg_in, const std::vector<Pose>& trajectory) {
    RunConfig cfg = cfg_in;
    cfg.steps = static_cast<int>(trajectory.size());
    cfg.validate();
    SdfScene scene = resolve_scene(cfg.scene);
    cfg.map.bounds = scene.bounds;
    cfg.ba.sampling.near = cfg.camera.near;
    cfg.ba.sampling.far = cfg.camera.far;

    EpisodeState ep(cfg, scene);
    ep.map = init_map(cfg.map, cfg.seed);
    ep.optim = init_optim(ep.map, cfg.adam);
    ep.goal_space = build_goal_space(scene.bounds, cfg.goal_xy_stride, cfg.goal_layer_gap);
    ep.gt_mesh = extract_gt_mesh(scene, cfg.eval_voxel);

    RunResult out;
    out.scene = scene;
    RunLog& log = out.log;
    try {
        for (int step = 0; step < cfg.steps; ++step) {
            ep.agent.pos = trajectory[step].pos;
            ep.agent.rot = trajectory[step].rot;
            bool keyframe = (step % cfg.keyframe_interval) == 0;
            if (keyframe || cfg.map_every_step) keyframe_update(ep, log, step);
            log.steps.push_back({step, ep.agent, ActionType::Move, ep.cached_sum_sigma2,
                                 ep.last_loss_total});
        }
    } catch (const std::exception& e) {
        log.aborted = true;
        log.error = e.what();
    }
    finalize(ep, out);
    out.map = std::move(ep.map);
    out.optim = std::move(ep.optim);
    out.gt_mesh = std::move(ep.gt_mesh);
    return out;
}

// ---------------------------------------------------------------------------
// Artifact export
// ---------------------------------------------------------------------------

namespace {

void write_or_throw(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("export_run: cannot open " + path);
    f << content;
    if (!f) throw std::runtime_error("export_run: write failure on " + path);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void export_run(const RunResult& result, const RunConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

    save_ply(result.mesh, path("mesh.ply"));
    save_ply(result.culled_mesh, path("culled_mesh.ply"));

    {
        std::string out;
        for (const auto& ev : result.log.events) {
            nlohmann::json j{{"step", ev.step},
                             {"event", ev.type},
                             {"goal_xyz", {ev.goal.x, ev.goal.y, ev.goal.z}},
                             {"path_len_m", ev.path_len},
                             {"rrt_iters", ev.rrt_iters},
                             {"rrt_nodes", ev.rrt_nodes}};
            if (!ev.detail.empty()) j["detail"] = ev.detail;
            out += j.dump() + "\n";
        }
        write_or_throw(path("trajectory.jsonl"), out);
    }
    {
        std::string out = "step,log_sum_sigma2,comp_ratio_pct\n";
        for (const auto& row : result.log.checkpoints)
            out += std::to_string(row.step) + "," + fmt(row.log_sum_sigma2) + "," +
                   fmt(row.comp_ratio_pct) + "\n";
        write_or_throw(path("uncertainty.csv"), out);
    }
    {
        std::string out = "step,iter,L_c,L_d,L_sdf,L_fs,L_smooth,total\n";
        for (const auto& row : result.log.losses)
            out += std::to_string(row.step) + "," + std::to_string(row.iter) + "," +
                   fmt(row.loss.l_c) + "," + fmt(row.loss.l_d) + "," + fmt(row.loss.l_sdf) + "," +
                   fmt(row.loss.l_fs) + "," + fmt(row.loss.l_smooth) + "," + fmt(row.loss.total) +
                   "\n";
        write_or_throw(path("losses.csv"), out);
    }
    {
        nlohmann::json j{{"acc_cm", result.metrics.acc_cm},
                         {"comp_cm", result.metrics.comp_cm},
                         {"comp_ratio_pct", result.metrics.comp_ratio_pct},
                         {"mad_cm", result.metrics.mad_cm},
                         {"pred_vertices", result.metrics.pred_vertices},
                         {"gt_vertices", result.metrics.gt_vertices},
                         {"steps", cfg.steps},
                         {"seed", cfg.seed}};
        if (result.log.aborted) {
            j["aborted"] = true;
            j["error"] = result.log.error;
        }
        write_or_throw(path("metrics.json"), j.dump(2) + "\n");
    }
    {
        std::string out = "step,x,y,z,qw,qx,qy,qz,action,sum_sigma2,loss_total\n";
        const char* names[] = {"move", "rotate", "stay"};
        for (const auto& s : result.log.steps)
            out += std::to_string(s.step) + "," + fmt(s.state.pos.x) + "," + fmt(s.state.pos.y) +
                   "," + fmt(s.state.pos.z) + "," + fmt(s.state.rot.w) + "," + fmt(s.state.rot.x) +
                   "," + fmt(s.state.rot.y) + "," + fmt(s.state.rot.z) + "," +
                   names[static_cast<int>(s.action)] + "," + fmt(s.sum_sigma2) + "," +
                   fmt(s.loss_total) + "\n";
        write_or_throw(path("steps.csv"), out);
    }
}

}  // namespace recon

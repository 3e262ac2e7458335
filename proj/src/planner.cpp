#include "recon/planner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "recon/sim_render.hpp"

namespace recon {

double volume_interp(const ScalarGrid& g, const Vec3& p) {
    double px = (p.x - g.origin.x) / g.voxel - 0.5;
    double py = (p.y - g.origin.y) / g.voxel - 0.5;
    double pz = (p.z - g.origin.z) / g.voxel - 0.5;
    px = std::min(static_cast<double>(g.nx - 1), std::max(0.0, px));
    py = std::min(static_cast<double>(g.ny - 1), std::max(0.0, py));
    pz = std::min(static_cast<double>(g.nz - 1), std::max(0.0, pz));
    int i = std::min(static_cast<int>(px), g.nx - 2);
    int j = std::min(static_cast<int>(py), g.ny - 2);
    int k = std::min(static_cast<int>(pz), g.nz - 2);
    double tx = px - i, ty = py - j, tz = pz - k;
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) {
        int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        acc += w * g.at(i + dx, j + dy, k + dz);
    }
    return acc;
}

ScalarGrid build_sdf_volume(const MapModel& map, const Aabb& bounds, double voxel) {
    ScalarGrid grid;
    grid.voxel = voxel;
    grid.origin = bounds.min;
    grid_dims_for_bounds(bounds, voxel, grid.nx, grid.ny, grid.nz);
    grid.values.resize(static_cast<size_t>(grid.nx) * grid.ny * grid.nz);
#pragma omp parallel
    {
        std::vector<double> gamma(map.cfg.gamma_dim()), valpha(map.cfg.valpha_dim());
        std::vector<double> act(map.layout.geo.act_size());
#pragma omp for schedule(dynamic, 1)
        for (int k = 0; k < grid.nz; ++k) {
            for (int j = 0; j < grid.ny; ++j) {
                for (int i = 0; i < grid.nx; ++i) {
                    Vec3 x = grid.center(i, j, k);
                    one_blob_encode(x, map.cfg, gamma.data());
                    grid_features(map, x, valpha.data(), nullptr);
                    double s;
                    const double* h;
                    decode_geometry(map, gamma.data(), valpha.data(), act.data(), s, h);
                    grid.values[grid.index(i, j, k)] = static_cast<float>(s);
                }
            }
        }
    }
    return grid;
}

ScalarGrid build_sdf_volume_oracle(const SdfScene& scene, const Aabb& bounds, double voxel) {
    ScalarGrid grid;
    grid.voxel = voxel;
    grid.origin = bounds.min;
    grid_dims_for_bounds(bounds, voxel, grid.nx, grid.ny, grid.nz);
    grid.values.resize(static_cast<size_t>(grid.nx) * grid.ny * grid.nz);
#pragma omp parallel for schedule(dynamic, 1)
    for (int k = 0; k < grid.nz; ++k)
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i)
                grid.values[grid.index(i, j, k)] =
                    static_cast<float>(scene_sdf(scene, grid.center(i, j, k)));
    return grid;
}

UncertaintySnapshot snapshot_uncertainty(const MapModel& map) {
    UncertaintySnapshot snap;
    snap.info = map.layout.ugrid;
    snap.unreachable = map.unreachable;
    snap.raw.resize(snap.info.count());
    if (map.cfg.uncertainty_mode == UncertaintyMode::Grid) {
        const float* raw = map.uraw();
        std::copy(raw, raw + snap.info.count(), snap.raw.begin());
        return snap;
    }
    const auto& g = snap.info;
#pragma omp parallel
    {
        std::vector<double> gamma(map.cfg.gamma_dim()), valpha(map.cfg.valpha_dim());
        std::vector<double> geo_act(map.layout.geo.act_size());
        std::vector<double> unet_act(map.layout.unet.act_size());
        std::vector<double> in(map.cfg.gamma_dim() + map.cfg.h_dim);
#pragma omp for schedule(dynamic, 1)
        for (int k = 0; k < g.nz; ++k) {
            for (int j = 0; j < g.ny; ++j) {
                for (int i = 0; i < g.nx; ++i) {
                    Vec3 x = g.vertex(i, j, k);
                    one_blob_encode(x, map.cfg, gamma.data());
                    grid_features(map, x, valpha.data(), nullptr);
                    double s;
                    const double* h;
                    decode_geometry(map, gamma.data(), valpha.data(), geo_act.data(), s, h);
                    const int gd = map.cfg.gamma_dim();
                    for (int t = 0; t < gd; ++t) in[t] = gamma[t];
                    for (int t = 0; t < map.cfg.h_dim; ++t) in[gd + t] = h[t];
                    map.layout.unet.forward(map.params.data(), in.data(), unet_act.data());
                    snap.raw[g.index(i, j, k)] =
                        static_cast<float>(unet_act[map.layout.unet.act_size() - 1]);
                }
            }
        }
    }
    return snap;
}

double sum_sigma2(const UncertaintySnapshot& snap) {
    double acc = 0.0;
    const size_t n = snap.raw.size();
#pragma omp parallel for schedule(static) reduction(+ : acc)
    for (int64_t i = 0; i < static_cast<int64_t>(n); ++i) {
        if (!snap.unreachable.empty() && snap.unreachable[i]) continue;
        acc += softplus(snap.raw[i]);
    }
    return acc;
}

std::vector<UVertexScore> top_k_uncertain(const UncertaintySnapshot& snap, int k,
                                          uint64_t tie_seed) {
    if (k < 1) throw std::invalid_argument("top_k_uncertain: k must be >= 1");
    const auto& g = snap.info;
    std::vector<UVertexScore> all;
    all.reserve(g.count());
    for (int kz = 0; kz < g.nz; ++kz)
        for (int jy = 0; jy < g.ny; ++jy)
            for (int ix = 0; ix < g.nx; ++ix) {
                size_t idx = g.index(ix, jy, kz);
                if (!snap.unreachable.empty() && snap.unreachable[idx]) continue;
                all.push_back({idx, g.vertex(ix, jy, kz), softplus(snap.raw[idx])});
            }
    // Ties resolved by a seeded per-vertex priority (uniform among the tied).
    auto priority = [tie_seed](size_t idx) {
        return Rng::splitmix(tie_seed ^ (0x9E3779B97F4A7C15ULL * (idx + 1)));
    };
    auto cmp = [&](const UVertexScore& a, const UVertexScore& b) {
        if (a.sigma2 != b.sigma2) return a.sigma2 > b.sigma2;
        uint64_t pa = priority(a.index), pb = priority(b.index);
        if (pa != pb) return pa < pb;
        return a.index < b.index;
    };
    size_t kk = std::min<size_t>(k, all.size());
    std::nth_element(all.begin(), all.begin() + kk, all.end(), cmp);
    all.resize(kk);
    std::sort(all.begin(), all.end(), cmp);
    return all;
}

bool visible(const ScalarGrid& vs, const Vec3& a, const Vec3& b) {
    double len = norm(b - a);
    if (len <= vs.voxel) return true;  // endpoint exclusion margin
    Vec3 dir = (b - a) / len;
    double step = 0.5 * vs.voxel;
    int n = static_cast<int>(std::ceil(len / step));
    for (int i = 1; i < n; ++i) {
        double t = i * step;
        if (t <= vs.voxel || t >= len - vs.voxel) continue;  // skip near endpoints
        if (volume_interp(vs, a + t * dir) < 0.0) return false;
    }
    return true;
}

GoalSpace build_goal_space(const Aabb& bounds, double xy_stride, double layer_gap) {
    if (!(xy_stride > 0.0) || !(layer_gap > 0.0))
        throw std::invalid_argument("build_goal_space: strides must be positive");
    GoalSpace gs;
    Vec3 ext = bounds.extent();
    gs.nx = std::max(1, static_cast<int>(ext.x / xy_stride));
    gs.ny = std::max(1, static_cast<int>(ext.y / xy_stride));
    std::vector<double> heights;
    for (double z = bounds.min.z + 0.5; z <= bounds.max.z; z += layer_gap) heights.push_back(z);
    if (heights.empty()) heights.push_back(bounds.center().z);
    gs.n_layers = static_cast<int>(heights.size());
    gs.candidates.reserve(static_cast<size_t>(gs.nx) * gs.ny * gs.n_layers);
    for (int l = 0; l < gs.n_layers; ++l)
        for (int j = 0; j < gs.ny; ++j)
            for (int i = 0; i < gs.nx; ++i)
                gs.candidates.push_back({bounds.min.x + (i + 0.5) * xy_stride,
                                         bounds.min.y + (j + 0.5) * xy_stride, heights[l]});
    gs.feasible.assign(gs.candidates.size(), 1);
    return gs;
}

void mark_goal_feasibility(GoalSpace& gs, const ScalarGrid& vs, double agent_radius) {
    // Free-space supervision saturates the learned SDF at the truncation
    // distance, so the clearance test keeps a small margin below it.
    const double threshold = agent_radius + 0.05 - 0.015;
    for (size_t i = 0; i < gs.candidates.size(); ++i)
        gs.feasible[i] = volume_interp(vs, gs.candidates[i]) >= threshold ? 1 : 0;
}

GoalSearchResult search_goal(const GoalSpace& gs, const std::vector<UVertexScore>& topk,
                             const ScalarGrid& vs, const GoalSearchParams& params) {
    if (topk.empty()) throw std::invalid_argument("search_goal: topk is empty");
    GoalSearchResult best;
    const size_t n = gs.size();
    std::vector<double> scores(n, 0.0);
    std::vector<int> focus(n, -1);  // index into topk of the best visible vertex
#pragma omp parallel for schedule(dynamic, 16)
    for (int64_t ci = 0; ci < static_cast<int64_t>(n); ++ci) {
        if (!gs.feasible[ci]) continue;
        const Vec3& xg = gs.candidates[ci];
        double score = 0.0;
        int best_focus = -1;
        double best_focus_sigma = -1.0;
        for (size_t t = 0; t < topk.size(); ++t) {
            double dist = norm(topk[t].pos - xg);
            if (dist < params.range_min || dist > params.range_max) continue;
            if (!visible(vs, xg, topk[t].pos)) continue;
            score += params.count_mode ? 1.0 : topk[t].sigma2;
            if (topk[t].sigma2 > best_focus_sigma) {
                best_focus_sigma = topk[t].sigma2;
                best_focus = static_cast<int>(t);
            }
        }
        scores[ci] = score;
        focus[ci] = best_focus;
    }
    // Argmax with smallest-flat-index tie break (serial, deterministic).
    size_t best_idx = 0;
    double best_score = 0.0;
    bool any = false;
    for (size_t ci = 0; ci < n; ++ci) {
        if (scores[ci] > best_score) {
            best_score = scores[ci];
            best_idx = ci;
            any = true;
        }
    }
    if (!any) return best;  // found=false: NoInformativeGoal
    best.found = true;
    best.candidate_index = best_idx;
    best.position = gs.candidates[best_idx];
    best.focus_point = topk[focus[best_idx]].pos;
    best.orientation = look_at(best.position, best.focus_point);
    best.score = best_score;
    return best;
}

// ---------------------------------------------------------------------------
// E-RRT
// ---------------------------------------------------------------------------

namespace {

bool segment_clear(const ScalarGrid& vs, const Vec3& a, const Vec3& b, double clearance,
                   double sample_step) {
    return !check_collision_sdf(vs, a, b, clearance, sample_step);
}

struct NnIndex {
    // Uniform-grid buckets over the volume bounds for nearest-neighbor scans.
    double cell = 0.4;
    Vec3 origin;
    int nx = 0, ny = 0, nz = 0;
    std::vector<std::vector<int32_t>> buckets;

    void init(const ScalarGrid& vs) {
        origin = vs.origin;
        nx = std::max(1, static_cast<int>(std::ceil(vs.nx * vs.voxel / cell)));
        ny = std::max(1, static_cast<int>(std::ceil(vs.ny * vs.voxel / cell)));
        nz = std::max(1, static_cast<int>(std::ceil(vs.nz * vs.voxel / cell)));
        buckets.assign(static_cast<size_t>(nx) * ny * nz, {});
    }
    int clampi(double v, int n) const {
        return std::min(n - 1, std::max(0, static_cast<int>(v)));
    }
    size_t bucket_of(const Vec3& p, int& i, int& j, int& k) const {
        i = clampi((p.x - origin.x) / cell, nx);
        j = clampi((p.y - origin.y) / cell, ny);
        k = clampi((p.z - origin.z) / cell, nz);
        return (static_cast<size_t>(k) * ny + j) * nx + i;
    }
    void insert(const Vec3& p, int32_t idx) {
        int i, j, k;
        buckets[bucket_of(p, i, j, k)].push_back(idx);
    }
    // Exact nearest node: expanding shells with an early distance bound.
    int32_t nearest(const std::vector<Vec3>& nodes, const Vec3& q) const {
        int qi, qj, qk;
        bucket_of(q, qi, qj, qk);
        int max_r = std::max({nx, ny, nz});
        int32_t best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int r = 0; r <= max_r; ++r) {
            if (best >= 0) {
                // Cells at ring r are at least (r-1)*cell away.
                double min_possible = (r - 1) * cell;
                if (min_possible > 0.0 && min_possible * min_possible > best_d2) break;
            }
            for (int k = qk - r; k <= qk + r; ++k) {
                if (k < 0 || k >= nz) continue;
                for (int j = qj - r; j <= qj + r; ++j) {
                    if (j < 0 || j >= ny) continue;
                    for (int i = qi - r; i <= qi + r; ++i) {
                        if (i < 0 || i >= nx) continue;
                        if (std::max({std::abs(i - qi), std::abs(j - qj), std::abs(k - qk)}) != r)
                            continue;  // shell only
                        for (int32_t idx : buckets[(static_cast<size_t>(k) * ny + j) * nx + i]) {
                            double d2 = norm2(nodes[idx] - q);
                            if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
                                best_d2 = d2;
                                best = idx;
                            }
                        }
                    }
                }
            }
        }
        return best;
    }
};

Aabb grid_bounds(const ScalarGrid& vs) {
    return {vs.origin, vs.origin + Vec3{vs.nx * vs.voxel, vs.ny * vs.voxel, vs.nz * vs.voxel}};
}

PlannedPath extract_path(const RrtTree& tree, int32_t leaf, double step) {
    std::vector<Vec3> raw;
    for (int32_t n = leaf; n >= 0; n = tree.parent[n]) raw.push_back(tree.nodes[n]);
    std::reverse(raw.begin(), raw.end());
    PlannedPath path;
    path.waypoints.push_back(raw.front());
    for (size_t i = 1; i < raw.size(); ++i) {
        Vec3 a = raw[i - 1], b = raw[i];
        double len = norm(b - a);
        int n_seg = std::max(1, static_cast<int>(std::ceil(len / step - 1e-9)));
        for (int s = 1; s <= n_seg; ++s) path.waypoints.push_back(a + (b - a) * (static_cast<double>(s) / n_seg));
        path.length += len;
    }
    return path;
}

struct RegionGoal {
    Vec3 target;
    double radius = 0.0;  // 0 = exact goal
};

PlanResult rrt_plan(const ScalarGrid& vs, const Vec3& start, const RegionGoal& goal,
                    const RrtParams& params) {
    if (check_collision_sdf(vs, start, start, params.clearance, params.collision_step))
        throw std::invalid_argument("plan_path: start position is in collision");

    auto region_ok = [&](const Vec3& p) {
        if (goal.radius <= 0.0) return norm(p - goal.target) < 1e-9;
        return norm(p - goal.target) <= goal.radius && visible(vs, p, goal.target);
    };

    PlanResult result;
    if (region_ok(start) || norm(start - goal.target) < 1e-9) {
        result.reached = true;
        result.path.waypoints = {start};
        result.path.length = 0.0;
        result.nodes = 1;
        return result;
    }

    RrtTree tree;
    tree.nodes.push_back(start);
    tree.parent.push_back(-1);
    NnIndex nn;
    nn.init(vs);
    nn.insert(start, 0);
    Rng rng(params.seed, /*stream=*/11);
    const Aabb bounds = grid_bounds(vs);

    auto clear = [&](const Vec3& a, const Vec3& b) {
        return segment_clear(vs, a, b, params.clearance, params.collision_step);
    };

    for (int it = 1; it <= params.max_iterations; ++it) {
        result.iterations = it;

        if (!params.vanilla) {
            // Direct-line attempt from the tree node nearest the goal.
            int32_t near_goal = nn.nearest(tree.nodes, goal.target);
            Vec3 from = tree.nodes[near_goal];
            Vec3 to = goal.target;
            if (goal.radius > 0.0) {
                double d = norm(from - goal.target);
                if (d > goal.radius)
                    to = goal.target + (from - goal.target) * (goal.radius * 0.999 / d);
            }
            if (clear(from, to) && (goal.radius <= 0.0 || region_ok(to))) {
                tree.nodes.push_back(to);
                tree.parent.push_back(near_goal);
                result.reached = true;
                result.nodes = static_cast<int>(tree.nodes.size());
                result.path = extract_path(tree, static_cast<int32_t>(tree.nodes.size()) - 1,
                                           params.step);
                result.path.length = 0.0;
                for (size_t i = 1; i < result.path.waypoints.size(); ++i)
                    result.path.length +=
                        norm(result.path.waypoints[i] - result.path.waypoints[i - 1]);
                return result;
            }
        }

        // Random sample (vanilla: biased toward the goal).
        Vec3 sample;
        if (params.vanilla && rng.uniform() < params.goal_bias) {
            sample = goal.target;
        } else {
            sample = {rng.uniform(bounds.min.x, bounds.max.x),
                      rng.uniform(bounds.min.y, bounds.max.y),
                      rng.uniform(bounds.min.z, bounds.max.z)};
        }
        int32_t nearest = nn.nearest(tree.nodes, sample);
        Vec3 from = tree.nodes[nearest];
        double dist = norm(sample - from);
        if (dist < 1e-9) continue;
        Vec3 dir = (sample - from) / dist;

        int max_ext = params.vanilla ? 1 : params.extend_nodes;
        int32_t parent = nearest;
        for (int e = 1; e <= max_ext; ++e) {
            double t = std::min(e * params.step, dist);
            Vec3 cand = from + t * dir;
            if (!clear(tree.nodes[parent], cand)) break;
            tree.nodes.push_back(cand);
            tree.parent.push_back(parent);
            parent = static_cast<int32_t>(tree.nodes.size()) - 1;
            nn.insert(cand, parent);

            if (goal.radius > 0.0 && region_ok(cand)) {
                result.reached = true;
            } else if (goal.radius <= 0.0 && norm(cand - goal.target) <= params.step &&
                       clear(cand, goal.target)) {
                tree.nodes.push_back(goal.target);
                tree.parent.push_back(parent);
                parent = static_cast<int32_t>(tree.nodes.size()) - 1;
                result.reached = true;
            }
            if (result.reached) {
                result.nodes = static_cast<int>(tree.nodes.size());
                result.path = extract_path(tree, parent, params.step);
                return result;
            }
            if (t >= dist) break;
        }
    }
    result.reached = false;
    result.nodes = static_cast<int>(tree.nodes.size());
    result.iterations = params.max_iterations;
    return result;
}

}  // namespace

PlanResult plan_path(const ScalarGrid& vs, const Vec3& start, const Vec3& goal,
                     const RrtParams& params) {
    return rrt_plan(vs, start, RegionGoal{goal, 0.0}, params);
}

PlanResult plan_path_to_region(const ScalarGrid& vs, const Vec3& start, const Vec3& target,
                               double radius, const RrtParams& params) {
    return rrt_plan(vs, start, RegionGoal{target, radius}, params);
}

int filter_unreachable(MapModel& map, UncertaintySnapshot& snap, const ScalarGrid& vs,
                       const Vec3& agent_pos, const std::vector<UVertexScore>& vertices,
                       const RrtParams& params) {
    int masked = 0;
    for (const auto& v : vertices) {
        if (map.unreachable[v.index]) continue;
        if (norm(v.pos - agent_pos) <= AgentState::kMaxStep) continue;  // never masked
        PlanResult probe = plan_path_to_region(vs, agent_pos, v.pos, 2.0, params);
        if (!probe.reached) {
            map.unreachable[v.index] = 1;
            snap.unreachable[v.index] = 1;
            ++masked;
        }
    }
    return masked;
}

bool check_collision_sdf(const ScalarGrid& vs, const Vec3& a, const Vec3& b, double clearance,
                         double sample_step) {
    double len = norm(b - a);
    int n = std::max(1, static_cast<int>(std::ceil(len / sample_step)));
    for (int i = 0; i <= n; ++i) {
        Vec3 p = a + (b - a) * (static_cast<double>(i) / n);
        if (volume_interp(vs, p) < clearance) return true;
    }
    return false;
}

bool check_collision_scene(const SdfScene& scene, const Vec3& a, const Vec3& b, double clearance,
                           double sample_step) {
    double len = norm(b - a);
    int n = std::max(1, static_cast<int>(std::ceil(len / sample_step)));
    for (int i = 0; i <= n; ++i) {
        Vec3 p = a + (b - a) * (static_cast<double>(i) / n);
        if (scene_sdf(scene, p) < clearance) return true;
    }
    return false;
}

bool check_collision_panorama(const SdfScene& scene, const ScalarGrid& vs, const Vec3& a,
                              const Vec3& b, double invalid_threshold) {
    if (check_collision_sdf(vs, a, b)) return true;
    auto pano = render_equirect_depth(scene, b, 16, 32, /*t_max=*/50.0);
    return invalid_fraction(pano) > invalid_threshold;
}

std::vector<Quat> plan_observe_rotations(const AgentState& current,
                                         const std::vector<Vec3>& targets) {
    std::vector<Quat> seq;
    if (targets.empty()) return seq;
    std::vector<Quat> looks;
    looks.reserve(targets.size());
    for (const auto& t : targets) looks.push_back(look_at(current.pos, t));

    const double max_rot = deg_to_rad(AgentState::kMaxRotDeg);
    Quat cur = current.rot;
    std::vector<bool> used(looks.size(), false);
    for (size_t round = 0; round < looks.size(); ++round) {
        // Greedy: least rotational effort from the current orientation.
        int best = -1;
        double best_ang = 0.0;
        for (size_t i = 0; i < looks.size(); ++i) {
            if (used[i]) continue;
            double ang = quat_angle(cur, looks[i]);
            if (best < 0 || ang < best_ang) {
                best = static_cast<int>(i);
                best_ang = ang;
            }
        }
        used[best] = true;
        if (best_ang > 1e-9) {
            int n_steps = static_cast<int>(std::ceil(best_ang / max_rot - 1e-12));
            for (int s = 1; s <= n_steps; ++s)
                seq.push_back(slerp(cur, looks[best], static_cast<double>(s) / n_steps));
        }
        cur = looks[best];
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Action state machine
// ---------------------------------------------------------------------------

namespace {

Quat rotate_toward(const Quat& from, const Quat& to, double max_rad) {
    double ang = quat_angle(from, to);
    if (ang <= max_rad || ang < 1e-12) return to;
    return slerp(from, to, max_rad / ang);
}

void push_event(PlannerContext& ctx, PlannerEvent ev) {
    ev.step = ctx.step;
    if (ctx.events) ctx.events->push_back(std::move(ev));
}

// Goal search with the fallback ladder: widen the range once, then aim for
// the feasible candidate nearest an unobserved vertex.
GoalSearchResult search_goal_with_fallback(PolicyState& policy, const AgentState& agent,
                                           PlannerContext& ctx) {
    (void)policy;
    GoalSearchResult res = search_goal(*ctx.goal_space, *ctx.topk, *ctx.vs, ctx.goal_params);
    if (res.found) return res;
    GoalSearchParams wide = ctx.goal_params;
    wide.range_min = 0.25;
    wide.range_max = 3.0;
    res = search_goal(*ctx.goal_space, *ctx.topk, *ctx.vs, wide);
    if (res.found) {
        push_event(ctx, {"warn", 0, {}, 0, 0, 0, "goal range widened"});
        return res;
    }
    // Nearest-unobserved heuristic: aim at the unobserved, reachable sigma
    // vertex nearest the agent, from the nearest feasible candidate.
    const auto& g = ctx.usnap->info;
    double best_d = std::numeric_limits<double>::infinity();
    Vec3 target;
    bool got = false;
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                size_t idx = g.index(i, j, k);
                if (ctx.map->observed[idx] || ctx.map->unreachable[idx]) continue;
                double d = norm(g.vertex(i, j, k) - agent.pos);
                if (d < best_d) {
                    best_d = d;
                    target = g.vertex(i, j, k);
                    got = true;
                }
            }
    if (!got) target = agent.pos;
    double best_cd = std::numeric_limits<double>::infinity();
    for (size_t ci = 0; ci < ctx.goal_space->size(); ++ci) {
        if (!ctx.goal_space->feasible[ci]) continue;
        double d = norm(ctx.goal_space->candidates[ci] - target);
        if (d < best_cd) {
            best_cd = d;
            res.candidate_index = ci;
        }
    }
    if (std::isinf(best_cd)) {
        // Degenerate: nothing feasible yet (early untrained map). Stay put.
        res.found = true;
        res.position = agent.pos;
        res.focus_point = got ? target : agent.pos + agent.rot.rotate(Vec3{0, 0, 1});
        res.orientation = agent.rot;
        res.score = 0.0;
        push_event(ctx, {"warn", 0, {}, 0, 0, 0, "no feasible goal candidates; staying"});
        return res;
    }
    res.found = true;
    res.position = ctx.goal_space->candidates[res.candidate_index];
    res.focus_point = got ? target : res.position + Vec3{1, 0, 0};
    res.orientation = look_at(res.position, res.focus_point);
    res.score = 0.0;
    push_event(ctx, {"warn", 0, {}, 0, 0, 0, "nearest-unobserved fallback goal"});
    return res;
}

void replan(PolicyState& policy, const AgentState& agent, PlannerContext& ctx) {
    for (int attempt = 0; attempt < 3; ++attempt) {
        GoalSearchResult goal = search_goal_with_fallback(policy, agent, ctx);
        RrtParams rrt = ctx.rrt;
        rrt.seed = ctx.rng ? ctx.rng->next_u64() : 1;
        PlanResult plan = plan_path(*ctx.vs, agent.pos, goal.position, rrt);
        if (plan.reached) {
            policy.goal = goal;
            policy.path = plan.path;
            policy.path.look_target = goal.focus_point;
            policy.cursor = policy.path.waypoints.size() > 1 ? 1 : 0;
            policy.mode = PolicyMode::Move;
            policy.plan_required = false;
            push_event(ctx, {"plan", 0, goal.position, plan.path.length, plan.iterations,
                             plan.nodes, ""});
            return;
        }
        push_event(ctx, {"unreachable", 0, goal.position, 0, plan.iterations, plan.nodes, ""});
        if (attempt == 0) {
            // Mask unreachable sigma vertices, then search again.
            RrtParams probe = ctx.rrt;
            probe.max_iterations = std::min(ctx.rrt.max_iterations, 400);
            probe.seed = ctx.rng ? ctx.rng->next_u64() : 2;
            int masked = filter_unreachable(*ctx.map, *ctx.usnap, *ctx.vs, agent.pos, *ctx.topk,
                                            probe);
            if (masked > 0) {
                push_event(ctx, {"unreachable_filtered", 0, {}, 0, 0, masked, ""});
                // Drop masked vertices from the working top-k list.
                auto& topk = *ctx.topk;
                topk.erase(std::remove_if(topk.begin(), topk.end(),
                                          [&](const UVertexScore& v) {
                                              return ctx.map->unreachable[v.index] != 0;
                                          }),
                           topk.end());
                if (topk.empty()) break;
            }
        }
    }
    // Could not plan anywhere: observe in place until the next replan.
    policy.goal.found = true;
    policy.goal.position = agent.pos;
    policy.goal.focus_point = agent.pos + agent.rot.rotate(Vec3{0, 0, 1});
    policy.path.waypoints = {agent.pos};
    policy.path.look_target = policy.goal.focus_point;
    policy.path.length = 0.0;
    policy.cursor = 0;
    policy.mode = PolicyMode::Move;
    policy.plan_required = false;
    push_event(ctx, {"warn", 0, agent.pos, 0, 0, 0, "planning failed; observing in place"});
}

ProposedAction next_action_impl(PolicyState& policy, const AgentState& agent, PlannerContext& ctx,
                                int depth) {
    if (depth > 3) {
        ProposedAction stay;
        stay.type = ActionType::Stay;
        stay.next = agent;
        return stay;
    }

    if (policy.mode == PolicyMode::NeedPlan) replan(policy, agent, ctx);

    if (policy.mode == PolicyMode::Move) {
        if (policy.cursor >= policy.path.waypoints.size() ||
            (policy.path.waypoints.size() == 1 && norm(agent.pos - policy.path.waypoints[0]) < 1e-9)) {
            // Goal reached: queue the observation rotations.
            push_event(ctx, {"goal_reached", 0, policy.goal.position, 0, 0, 0, ""});
            std::vector<Vec3> targets;
            for (const auto& v : *ctx.topk) {
                double d = norm(v.pos - agent.pos);
                if (d < ctx.goal_params.range_min || d > ctx.goal_params.range_max) continue;
                if (!visible(*ctx.vs, agent.pos, v.pos)) continue;
                targets.push_back(v.pos);
                if (targets.size() >= 10) break;
            }
            AgentState here = agent;
            policy.observe_seq = plan_observe_rotations(here, targets);
            policy.observe_cursor = 0;
            policy.mode = PolicyMode::Observe;
            return next_action_impl(policy, agent, ctx, depth + 1);
        }
        Vec3 wp = policy.path.waypoints[policy.cursor];
        Vec3 delta = wp - agent.pos;
        double d = norm(delta);
        ProposedAction act;
        act.type = ActionType::Move;
        act.next.pos = d <= AgentState::kMaxStep ? wp
                                                 : agent.pos + delta * (AgentState::kMaxStep / d);
        if (d <= AgentState::kMaxStep) ++policy.cursor;
        Vec3 focus = policy.path.look_target;
        Quat want = norm(focus - act.next.pos) > 1e-9 ? look_at(act.next.pos, focus) : agent.rot;
        act.next.rot = rotate_toward(agent.rot, want, deg_to_rad(AgentState::kMaxRotDeg));
        return act;
    }

    if (policy.mode == PolicyMode::Observe) {
        if (policy.observe_cursor >= policy.observe_seq.size()) {
            policy.mode = PolicyMode::NeedPlan;
            policy.plan_required = true;
            return next_action_impl(policy, agent, ctx, depth + 1);
        }
        ProposedAction act;
        act.type = ActionType::Rotate;
        act.next.pos = agent.pos;
        act.next.rot = policy.observe_seq[policy.observe_cursor];
        ++policy.observe_cursor;
        return act;
    }

    ProposedAction stay;
    stay.type = ActionType::Stay;
    stay.next = agent;
    return stay;
}

}  // namespace

ProposedAction next_action(PolicyState& policy, const AgentState& agent, PlannerContext& ctx) {
    return next_action_impl(policy, agent, ctx, 0);
}

void on_collision(PolicyState& policy, PlannerContext& ctx) {
    push_event(ctx, {"collision", 0, {}, 0, 0, 0, ""});
    policy.mode = PolicyMode::NeedPlan;
    policy.plan_required = true;
}

}  // namespace recon

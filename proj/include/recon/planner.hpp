#pragma once

#include <optional>
#include <string>
#include <vector>

#include "recon/map_model.hpp"
#include "recon/mesh.hpp"
#include "recon/rng.hpp"
#include "recon/scene.hpp"

namespace recon {

// Agent body and per-step motion limits.
struct AgentState {
    Vec3 pos;
    Quat rot;

    static constexpr double kMaxStep = 0.10;    // meters per step
    static constexpr double kMaxRotDeg = 10.0;  // degrees per step
    static constexpr double kRadius = 0.05;     // spherical body, meters
};

// Trilinear interpolation of a voxel-center grid, clamped at the border.
double volume_interp(const ScalarGrid& grid, const Vec3& p);

// SDF volume V_s: geometry decoder sampled at every voxel center.
ScalarGrid build_sdf_volume(const MapModel& map, const Aabb& bounds, double voxel);
// Same lattice sampled from the ground-truth scene (planning benchmarks).
ScalarGrid build_sdf_volume_oracle(const SdfScene& scene, const Aabb& bounds, double voxel);

// Dense sigma^2 state for the planner: raw (pre-softplus) vertex values. In
// grid mode this is a copy of the learned volume; in net mode the network is
// sampled at the vertex positions.
struct UncertaintySnapshot {
    UncertaintyGridInfo info;
    std::vector<float> raw;
    std::vector<uint8_t> unreachable;

    double sigma2_at_vertex(size_t i) const { return softplus(raw[i]); }
};
UncertaintySnapshot snapshot_uncertainty(const MapModel& map);

// Sum of sigma^2 over vertices not masked unreachable (the logged quantity).
double sum_sigma2(const UncertaintySnapshot& snap);

struct UVertexScore {
    size_t index = 0;
    Vec3 pos;
    double sigma2 = 0.0;
};

// k largest-sigma^2 vertices among those not masked unreachable; ties broken
// by a seeded uniform shuffle of the tied range.
std::vector<UVertexScore> top_k_uncertain(const UncertaintySnapshot& snap, int k,
                                          uint64_t tie_seed);

// Line-of-sight on the SDF volume: half-voxel raymarch, occluded when any
// interior sample (more than one voxel from either endpoint) is negative.
bool visible(const ScalarGrid& vs, const Vec3& a, const Vec3& b);

struct GoalSpace {
    int nx = 0, ny = 0, n_layers = 0;
    std::vector<Vec3> candidates;      // flat order: (layer*ny + j)*nx + i
    std::vector<uint8_t> feasible;

    size_t size() const { return candidates.size(); }
};

// XY lattice at xy_stride crossed with horizontal layers starting at
// floor + 0.5 m, spaced layer_gap apart.
GoalSpace build_goal_space(const Aabb& bounds, double xy_stride, double layer_gap);
// Candidates with interpolated V_s below radius + 0.05 m become infeasible.
void mark_goal_feasibility(GoalSpace& gs, const ScalarGrid& vs, double agent_radius);

struct GoalSearchParams {
    double range_min = 0.5;
    double range_max = 2.0;
    bool count_mode = false;  // score by visible-point count instead of sigma^2 sum
};

struct GoalSearchResult {
    bool found = false;
    size_t candidate_index = 0;
    Vec3 position;
    Quat orientation;
    Vec3 focus_point;  // the highest-sigma^2 visible in-range vertex
    double score = 0.0;
};

// Per feasible candidate, accumulates sigma^2 of visible top-k vertices
// within the observation range; argmax with smallest-flat-index tie break.
GoalSearchResult search_goal(const GoalSpace& gs, const std::vector<UVertexScore>& topk,
                             const ScalarGrid& vs, const GoalSearchParams& params);

struct PlannedPath {
    std::vector<Vec3> waypoints;  // consecutive points <= step size apart
    Vec3 look_target;
    double length = 0.0;
};

struct RrtParams {
    double step = 0.10;
    int extend_nodes = 10;  // nodes per extension (E-RRT fast tree)
    int max_iterations = 4000;
    double clearance = 0.05;
    double collision_step = 0.02;
    bool vanilla = false;     // reference: no direct line, single-node extension
    double goal_bias = 0.05;  // vanilla only
    uint64_t seed = 0;
};

struct RrtTree {
    std::vector<Vec3> nodes;
    std::vector<int32_t> parent;
    int iterations = 0;
};

struct PlanResult {
    bool reached = false;
    PlannedPath path;
    int iterations = 0;
    int nodes = 0;
};

// E-RRT: per iteration, first attempt a straight collision-free segment from
// the tree to the goal, then extend up to `extend_nodes` collision-checked
// steps toward a random sample. Unreachable after max_iterations.
PlanResult plan_path(const ScalarGrid& vs, const Vec3& start, const Vec3& goal,
                     const RrtParams& params);

// Relaxed reachability probe: succeeds when the tree reaches any point within
// `radius` of `target` with line of sight.
PlanResult plan_path_to_region(const ScalarGrid& vs, const Vec3& start, const Vec3& target,
                               double radius, const RrtParams& params);

// Marks vertices whose relaxed RRT probe fails. Never touches raw sigma
// values; vertices within the agent's step size are never masked. Returns
// the number of newly masked vertices.
int filter_unreachable(MapModel& map, UncertaintySnapshot& snap, const ScalarGrid& vs,
                       const Vec3& agent_pos, const std::vector<UVertexScore>& vertices,
                       const RrtParams& params);

// SDF-mode collision test between two states: 2 cm samples of interpolated
// V_s against the 5 cm body threshold.
bool check_collision_sdf(const ScalarGrid& vs, const Vec3& a, const Vec3& b,
                         double clearance = 0.05, double sample_step = 0.02);
// Panorama mode (additionally renders an equirectangular depth at b via the
// simulator): trips when the invalid fraction exceeds the threshold.
bool check_collision_panorama(const SdfScene& scene, const ScalarGrid& vs, const Vec3& a,
                              const Vec3& b, double invalid_threshold = 0.3);
// Ground-truth collision via the scene SDF (the simulator's physics).
bool check_collision_scene(const SdfScene& scene, const Vec3& a, const Vec3& b,
                           double clearance = 0.05, double sample_step = 0.02);

// Greedy least-rotation ordering over look-at targets, each transition
// subdivided by SLERP into steps of at most 10 degrees. Position is fixed.
std::vector<Quat> plan_observe_rotations(const AgentState& current,
                                         const std::vector<Vec3>& targets);

enum class PolicyMode { NeedPlan, Move, Observe, Stay };
enum class ActionType { Move, Rotate, Stay };

struct PlannerEvent {
    std::string type;  // plan | collision | goal_reached | unreachable_filtered | warn
    int step = 0;
    Vec3 goal;
    double path_len = 0.0;
    int rrt_iters = 0;
    int rrt_nodes = 0;
    std::string detail;
};

struct PolicyState {
    PolicyMode mode = PolicyMode::NeedPlan;
    PlannedPath path;
    size_t cursor = 0;
    std::vector<Quat> observe_seq;
    size_t observe_cursor = 0;
    GoalSearchResult goal;
    bool plan_required = true;
};

struct ProposedAction {
    ActionType type = ActionType::Stay;
    AgentState next;
};

// Everything next_action needs from the current planning snapshot.
struct PlannerContext {
    const ScalarGrid* vs = nullptr;
    UncertaintySnapshot* usnap = nullptr;
    std::vector<UVertexScore>* topk = nullptr;
    GoalSpace* goal_space = nullptr;
    MapModel* map = nullptr;
    RrtParams rrt;
    GoalSearchParams goal_params;
    Rng* rng = nullptr;
    int step = 0;
    std::vector<PlannerEvent>* events = nullptr;
};

// Algorithm state machine: replans when needed (goal search, path planning,
// reachability filtering on failure), follows the path one limited step at a
// time, then observes the top uncertain points by rotation. The caller
// validates the proposed state against the world and reports collisions via
// on_collision().
ProposedAction next_action(PolicyState& policy, const AgentState& agent, PlannerContext& ctx);

// Collision feedback: revert handled by the caller; flips the policy to
// NeedPlan and records the event.
void on_collision(PolicyState& policy, PlannerContext& ctx);

}  // namespace recon

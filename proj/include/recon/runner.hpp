#pragma once

#include <string>
#include <vector>

#include "recon/keyframe_db.hpp"
#include "recon/mapping.hpp"
#include "recon/metrics.hpp"
#include "recon/planner.hpp"
#include "recon/scene.hpp"

namespace recon {

enum class PlannerKind { Active, RandomWalk };
enum class CollisionMode { Sdf, Panorama };

struct RunConfig {
    std::string scene = "room1";  // bundled name or JSON path
    int steps = 2000;
    int keyframe_interval = 5;
    uint64_t seed = 0;
    PinholeCamera camera{240, 136, 60.0, 90.0, 0.05, 10.0};
    MapConfig map;  // bounds are filled from the scene
    BaConfig ba;
    AdamConfig adam;
    SamplerMode sampler = SamplerMode::Mixed;
    PlannerKind planner = PlannerKind::Active;
    CollisionMode collision = CollisionMode::Sdf;
    std::string out_dir = "out";
    bool map_every_step = false;
    double goal_xy_stride = 0.5;
    double goal_layer_gap = 1.0;
    int top_k = 300;
    double volume_voxel = 0.1;
    double eval_voxel = 0.1;
    int rrt_max_iterations = 4000;
    int observe_targets = 10;

    void validate() const;
};

// Flat key/value config file (TOML syntax: key = value, # comments, quoted
// strings). Unknown keys are rejected with the key name.
RunConfig parse_run_config(const std::string& text, const RunConfig& base = {});
RunConfig load_run_config(const std::string& path, const RunConfig& base = {});

struct StepRecord {
    int step = 0;
    AgentState state;
    ActionType action = ActionType::Stay;
    double sum_sigma2 = 0.0;
    double loss_total = 0.0;
};

struct CheckpointRow {
    int step = 0;
    double log_sum_sigma2 = 0.0;
    double comp_ratio_pct = 0.0;
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::vector<PlannerEvent> events;
    struct LossRow {
        int step;
        int iter;
        LossBreakdown loss;
    };
    std::vector<LossRow> losses;
    std::vector<CheckpointRow> checkpoints;
    bool aborted = false;
    std::string error;
};

struct RunResult {
    RunLog log;
    MapModel map;
    OptimState optim;
    SdfScene scene;
    TriangleMesh gt_mesh;
    TriangleMesh mesh;         // final predicted mesh (with vertex colors)
    TriangleMesh culled_mesh;  // observed-region mesh used for metrics
    MetricsReport metrics;
};

// Full episode per the active-reconstruction loop: plan when required, one
// action per step, keyframe observation + bundle adjustment on the keyframe
// cadence, planner snapshots rebuilt on replanning, artifacts at the end.
RunResult run_episode(const RunConfig& cfg);

// Mapping-only replay of a fixed pose trajectory (no planner): keyframes are
// rendered at the given poses on the keyframe cadence.
RunResult replay_mapping(const RunConfig& cfg, const std::vector<Pose>& trajectory);

// Writes mesh.ply, culled_mesh.ply, trajectory.jsonl, uncertainty.csv,
// losses.csv, metrics.json (and steps.csv) under out_dir.
void export_run(const RunResult& result, const RunConfig& cfg, const std::string& out_dir);

}  // namespace recon

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recon/map_model.hpp"
#include "recon/rng.hpp"

namespace recon {

// One observed pixel turned into a world-frame ray. depth_obs is the
// ray-length depth along dir (z-depth is converted at insertion time);
// 0 marks a pixel without a valid depth.
struct RaySample {
    Vec3 origin;
    Vec3 dir;  // unit
    Vec3 color_obs;
    double depth_obs = 0.0;
    int frame_id = 0;

    bool has_depth() const { return depth_obs > 0.0; }
};

enum class PointRegion : uint8_t {
    Truncation,  // |d - D| <= tr
    FreeSpace,   // d < D - tr
    Excluded,    // d > D + tr, or every point of an invalid-depth ray
};

struct RayPoints {
    Vec3 origin;
    Vec3 dir;
    double depth_obs = 0.0;
    std::vector<double> depths;  // ascending
    std::vector<PointRegion> region;
    int n_trunc = 0;
    int n_free = 0;

    Vec3 point(size_t i) const { return origin + depths[i] * dir; }
    size_t size() const { return depths.size(); }
};

struct SamplingConfig {
    int n_stratified = 32;
    int n_surface = 11;  // extra uniform depths across the truncation band
    double near = 0.05;
    double far = 10.0;
};

// Stratified depths over [near, min(far, bounds exit)] plus, for valid-depth
// rays, n_surface evenly spaced depths across [D - tr, D + tr].
RayPoints sample_along_ray(const RaySample& ray, const Aabb& bounds, const SamplingConfig& cfg,
                           double trunc, Rng& rng);

struct RenderOutput {
    Vec3 color;
    double depth = 0.0;
    double sigma2 = 0.0;
    double weight_sum = 0.0;
    bool valid = false;
    std::vector<double> weights;  // per-point w_i (filled by the public entry points)
};

// Per-ray depth term of the uncertainty-weighted depth loss:
// (d - D)^2 / (2 sigma^2) + log(sigma^2) / 2, with sigma^2 clamped at floor.
double depth_loss_term(double d_hat, double depth_obs, double sigma2_hat, double floor);

// Pure SDF-weighted rendering from per-point values:
// w_i = sigmoid(s_i/tr) * sigmoid(-s_i/tr), outputs are w-normalized sums.
// Marked invalid when sum(w) < 1e-8.
RenderOutput render_from_samples(const double* s, const Vec3* c, const double* sigma2,
                                 const double* depths, size_t n, double trunc);

// Evaluates the map along the ray points and renders color/depth/sigma^2.
RenderOutput render_ray(const MapModel& map, const RayPoints& points);

struct LossWeights {
    double c = 5.0;
    double d = 0.1;
    double sdf = 1000.0;
    double fs = 10.0;
    double smooth = 1e-6;
};

struct LossBreakdown {
    double l_c = 0.0, l_d = 0.0, l_sdf = 0.0, l_fs = 0.0, l_smooth = 0.0;
    double total = 0.0;
    LossWeights weights;

    void finish() {
        total = weights.c * l_c + weights.d * l_d + weights.sdf * l_sdf + weights.fs * l_fs +
                weights.smooth * l_smooth;
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double lr_grid = 0.01;
    double lr_decoder = 0.001;
    double lr_sigma_raw = 0.01;
};

struct OptimState {
    std::vector<float> m;
    std::vector<float> v;
    int64_t step = 0;
    AdamConfig cfg;
};

OptimState init_optim(const MapModel& map, const AdamConfig& cfg);

struct BaConfig {
    int n_iters = 10;
    int batch_size = 2148;     // N
    int min_current = 100;     // rays from the current keyframe per batch
    int smooth_samples = 512;  // |G| per iteration
    int grad_chunks = 16;      // fixed partition for deterministic accumulation
    LossWeights weights;
    SamplingConfig sampling;
    double sigma2_floor = 1e-6;
};

// Scratch for batched forward/backward; reusable across iterations.
class BaWorkspace;

// Full differentiable loss over a batch of rays: renders every ray, forms the
// five losses, and (when grad != nullptr) accumulates exact analytic
// parameter gradients. smooth_vertices holds |G| coarse-vertex lattice
// coords sampled by the caller. Deterministic for a fixed chunk partition.
LossBreakdown compute_losses(const MapModel& map, const std::vector<RaySample>& batch,
                             const std::vector<RayPoints>& points, const BaConfig& cfg,
                             const std::vector<std::array<int, 3>>& smooth_vertices, double* grad,
                             std::vector<size_t>* touched_uvertices, BaWorkspace* ws = nullptr);

// Volumetric uncertainty score of a candidate ray (sigma^2 rendered through
// the current map); geometry-only forward, no color pass.
double score_ray_sigma2(const MapModel& map, const RayPoints& points);

// Adam update with per-group learning rates; parameters untouched wherever
// the running moments and gradient are all zero.
void adam_step(MapModel& map, OptimState& optim, const double* grad);

class KeyframeDB;
enum class SamplerMode { Mixed, Random };

struct BaEvent {
    int iteration = 0;
    std::string message;
};

struct BaResult {
    std::vector<LossBreakdown> history;
    std::vector<BaEvent> events;
    // batch provenance of the last iteration
    int from_current = 0, from_db = 0, active_selected = 0;
};

// One bundle-adjustment call: n_iters batches drawn from the database,
// losses, analytic gradients, Adam updates, and observed-mask maintenance.
// Throws on non-finite loss, naming the iteration and parameter group.
BaResult ba_step(MapModel& map, KeyframeDB& db, SamplerMode mode, OptimState& optim,
                 const BaConfig& cfg, Rng& rng);

}  // namespace recon

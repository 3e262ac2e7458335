#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recon/geometry.hpp"

namespace recon {

enum class UncertaintyMode { Grid, Net };

struct MapConfig {
    Aabb bounds;
    int n_bins = 16;          // one-blob bins per axis
    int levels = 8;           // hash-grid levels L
    int feats_per_level = 2;  // features per level F
    int log2_table = 13;      // per-level table has 2^T rows
    int res_min = 16;
    int res_max = 256;
    int h_dim = 15;
    int mlp_width = 32;
    int mlp_depth = 2;  // hidden layers per decoder
    double trunc = 0.1;       // truncation distance tr, meters
    double u_voxel = 0.1;     // uncertainty grid voxel, meters
    double sigma_raw_init = 3.0;
    UncertaintyMode uncertainty_mode = UncertaintyMode::Grid;

    void validate() const;
    int gamma_dim() const { return 3 * n_bins; }
    int valpha_dim() const { return levels * feats_per_level; }
    int table_rows() const { return 1 << log2_table; }
    int grid_resolution(int level) const;
};

// Dense feed-forward MLP with ReLU hidden layers and a linear output,
// parameters stored in a flat array as [W0, b0, W1, b1, ...], W row-major
// (out x in).
struct MlpSpec {
    int in_dim = 0;
    int width = 0;
    int depth = 0;  // hidden layers
    int out_dim = 0;
    size_t offset = 0;  // into the flat parameter array

    int num_layers() const { return depth + 1; }
    int layer_in(int l) const { return l == 0 ? in_dim : width; }
    int layer_out(int l) const { return l == depth ? out_dim : width; }
    size_t layer_offset(int l) const;
    size_t param_count() const { return layer_offset(num_layers()) - offset; }
    // Activation buffer holds [input, hidden..., output].
    size_t act_size() const;

    void forward(const float* params, const double* input, double* act) const;
    // d_out is consumed; accumulates into grad (full-length buffer) and
    // writes dL/d_input into d_in (length in_dim) when d_in != nullptr.
    // scratch must hold at least 2*max(in_dim, width) values.
    void backward(const float* params, const double* act, double* d_out, double* grad,
                  double* d_in, double* scratch) const;
};

// Vertex-lattice uncertainty volume; sigma^2(x) = softplus(trilinear(raw, x)).
struct UncertaintyGridInfo {
    int nx = 0, ny = 0, nz = 0;
    Vec3 origin;
    double voxel = 0.1;

    size_t count() const { return static_cast<size_t>(nx) * ny * nz; }
    size_t index(int i, int j, int k) const {
        return (static_cast<size_t>(k) * ny + j) * nx + i;
    }
    Vec3 vertex(int i, int j, int k) const {
        return origin + Vec3{i * voxel, j * voxel, k * voxel};
    }
};

// Offsets into the canonical flat parameter ordering: hash-grid tables
// level-major, then decoder layers (geometry, color, optional uncertainty
// net), then uncertainty raw values.
struct ParamLayout {
    std::vector<size_t> grid_level_offset;  // levels + 1 entries
    MlpSpec geo;
    MlpSpec color;
    MlpSpec unet;  // only meaningful when uncertainty_mode == Net
    bool has_unet = false;
    size_t uraw_offset = 0;
    size_t total = 0;
    UncertaintyGridInfo ugrid;

    // Parameter groups for per-group learning rates.
    enum Group : int { GroupGrid = 0, GroupDecoders = 1, GroupSigmaRaw = 2 };
    int group_of(size_t param_index) const;
};

ParamLayout make_layout(const MapConfig& cfg);

// Per-level interpolation footprint: 8 table rows and trilinear weights.
struct GridCorners {
    // corner row index within the level's table (not global) and weight
    uint32_t rows[8];
    double weights[8];
};

struct MapModel {
    MapConfig cfg;
    ParamLayout layout;
    std::vector<float> params;
    std::vector<uint8_t> observed;     // per uncertainty vertex
    std::vector<uint8_t> unreachable;  // per uncertainty vertex

    const float* grid_level(int level) const { return params.data() + layout.grid_level_offset[level]; }
    const float* uraw() const { return params.data() + layout.uraw_offset; }
    float* uraw() { return params.data() + layout.uraw_offset; }
};

MapModel init_map(const MapConfig& cfg, uint64_t seed);

// One-blob coordinate encoding: per axis, Gaussian kernel (width 1/n_bins)
// evaluated at n_bins bin centers; axes concatenated. Out-of-bounds points
// are clamped. `out` must hold 3*n_bins values.
void one_blob_encode(const Vec3& x, const MapConfig& cfg, double* out);

// Trilinear hash-grid features V_alpha(x); `out` holds levels*F values and
// `corners` (when non-null) receives the per-level footprint for gradients.
void grid_features(const MapModel& map, const Vec3& x, double* out, GridCorners* corners);

// Geometry decoder f_tau(gamma, V_alpha) -> (s, h). `geo_act` must hold
// layout.geo.act_size() values and is filled for reuse by backward passes.
void decode_geometry(const MapModel& map, const double* gamma, const double* valpha,
                     double* geo_act, double& s, const double*& h);

// Color decoder f_phi(gamma, h) -> c in [0,1]^3 (logistic outputs).
void decode_color(const MapModel& map, const double* gamma, const double* h, double* color_act,
                  Vec3& c);

// Uncertainty query. Grid mode: softplus of the trilinear interpolation of
// raw values. Net mode: softplus of f_sigma(gamma, h); runs the geometry
// decoder internally.
double query_uncertainty(const MapModel& map, const Vec3& x);

// Convenience single-point queries (allocate scratch internally).
double query_sdf(const MapModel& map, const Vec3& x);
Vec3 query_color(const MapModel& map, const Vec3& x);

// Raw-value trilinear footprint at x: vertex indices and weights.
struct UVertexFootprint {
    size_t idx[8];
    double weights[8];
};
UVertexFootprint ugrid_footprint(const UncertaintyGridInfo& g, const Vec3& x);
double ugrid_interp_raw(const MapModel& map, const Vec3& x);

double softplus(double x);
double sigmoid(double x);

}  // namespace recon

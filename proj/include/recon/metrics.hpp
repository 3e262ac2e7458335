#pragma once

#include "recon/map_model.hpp"
#include "recon/mesh.hpp"

namespace recon {

struct MetricsReport {
    double acc_cm = 0.0;
    double comp_cm = 0.0;
    double comp_ratio_pct = 0.0;  // threshold 5 cm
    double mad_cm = 0.0;
    size_t pred_vertices = 0;
    size_t gt_vertices = 0;
};

// Exact nearest-vertex queries via a uniform-grid index (expanding shells).
class VertexIndex {
public:
    explicit VertexIndex(const std::vector<Vec3>& vertices, double cell = 0.25);
    // Distance from p to the nearest indexed vertex (inf when empty).
    double nearest_distance(const Vec3& p) const;

private:
    const std::vector<Vec3>& verts_;
    double cell_;
    Vec3 origin_;
    int nx_ = 0, ny_ = 0, nz_ = 0;
    std::vector<std::vector<uint32_t>> buckets_;
};

// Accuracy: mean pred-vertex -> nearest GT-vertex distance. Completion: the
// symmetric direction. Ratio: % of GT vertices within 5 cm. Empty meshes
// report infinite distances and zero ratio.
struct MeshDistances {
    double acc_m = 0.0;
    double comp_m = 0.0;
    double comp_ratio_pct = 0.0;
};
MeshDistances mesh_metrics(const TriangleMesh& pred, const TriangleMesh& gt,
                           double threshold = 0.05);

// Drops triangles whose centroid cell was never observed (any of the cell's
// 8 uncertainty vertices) or falls outside bounds.
TriangleMesh cull_mesh(const TriangleMesh& mesh, const UncertaintyGridInfo& grid,
                       const std::vector<uint8_t>& observed, const Aabb& bounds);

// Mean |predicted SDF| over ground-truth mesh vertices, in cm.
double sdf_mad(const MapModel& map, const TriangleMesh& gt);

}  // namespace recon

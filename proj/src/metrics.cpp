#include "recon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace recon {

VertexIndex::VertexIndex(const std::vector<Vec3>& vertices, double cell)
    : verts_(vertices), cell_(cell) {
    if (vertices.empty()) return;
    Vec3 lo = vertices[0], hi = vertices[0];
    for (const auto& v : vertices) {
        lo = cwise_min(lo, v);
        hi = cwise_max(hi, v);
    }
    origin_ = lo;
    nx_ = std::max(1, static_cast<int>((hi.x - lo.x) / cell_) + 1);
    ny_ = std::max(1, static_cast<int>((hi.y - lo.y) / cell_) + 1);
    nz_ = std::max(1, static_cast<int>((hi.z - lo.z) / cell_) + 1);
    buckets_.assign(static_cast<size_t>(nx_) * ny_ * nz_, {});
    for (uint32_t i = 0; i < vertices.size(); ++i) {
        const Vec3& v = vertices[i];
        int ci = std::min(nx_ - 1, std::max(0, static_cast<int>((v.x - origin_.x) / cell_)));
        int cj = std::min(ny_ - 1, std::max(0, static_cast<int>((v.y - origin_.y) / cell_)));
        int ck = std::min(nz_ - 1, std::max(0, static_cast<int>((v.z - origin_.z) / cell_)));
        buckets_[(static_cast<size_t>(ck) * ny_ + cj) * nx_ + ci].push_back(i);
    }
}

double VertexIndex::nearest_distance(const Vec3& p) const {
    if (verts_.empty()) return std::numeric_limits<double>::infinity();
    int qi = std::min(nx_ - 1, std::max(0, static_cast<int>((p.x - origin_.x) / cell_)));
    int qj = std::min(ny_ - 1, std::max(0, static_cast<int>((p.y - origin_.y) / cell_)));
    int qk = std::min(nz_ - 1, std::max(0, static_cast<int>((p.z - origin_.z) / cell_)));
    double best2 = std::numeric_limits<double>::infinity();
    int max_r = std::max({nx_, ny_, nz_});
    // The query point may lie outside the indexed box; widen the ring bound
    // by its distance to the box.
    double dx = std::max({origin_.x - p.x, p.x - (origin_.x + nx_ * cell_), 0.0});
    double dy = std::max({origin_.y - p.y, p.y - (origin_.y + ny_ * cell_), 0.0});
    double dz = std::max({origin_.z - p.z, p.z - (origin_.z + nz_ * cell_), 0.0});
    double outside = std::sqrt(dx * dx + dy * dy + dz * dz);
    for (int r = 0; r <= max_r; ++r) {
        if (std::isfinite(best2)) {
            double min_possible = std::max(0.0, (r - 1) * cell_ - outside);
            if (min_possible * min_possible > best2) break;
        }
        for (int k = qk - r; k <= qk + r; ++k) {
            if (k < 0 || k >= nz_) continue;
            for (int j = qj - r; j <= qj + r; ++j) {
                if (j < 0 || j >= ny_) continue;
                for (int i = qi - r; i <= qi + r; ++i) {
                    if (i < 0 || i >= nx_) continue;
                    if (std::max({std::abs(i - qi), std::abs(j - qj), std::abs(k - qk)}) != r)
                        continue;
                    for (uint32_t idx : buckets_[(static_cast<size_t>(k) * ny_ + j) * nx_ + i])
                        best2 = std::min(best2, norm2(verts_[idx] - p));
                }
            }
        }
    }
    return std::sqrt(best2);
}

MeshDistances mesh_metrics(const TriangleMesh& pred, const TriangleMesh& gt, double threshold) {
    MeshDistances out;
    if (pred.vertices.empty() || gt.vertices.empty()) {
        out.acc_m = std::numeric_limits<double>::infinity();
        out.comp_m = std::numeric_limits<double>::infinity();
        out.comp_ratio_pct = 0.0;
        return out;
    }
    VertexIndex gt_index(gt.vertices);
    VertexIndex pred_index(pred.vertices);

    // Distances computed in parallel, reduced in index order so results do
    // not depend on the thread count.
    std::vector<double> dist_pred(pred.vertices.size()), dist_gt(gt.vertices.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(pred.vertices.size()); ++i)
        dist_pred[i] = gt_index.nearest_distance(pred.vertices[i]);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(gt.vertices.size()); ++i)
        dist_gt[i] = pred_index.nearest_distance(gt.vertices[i]);

    double acc = 0.0;
    for (double d : dist_pred) acc += d;
    out.acc_m = acc / pred.vertices.size();
    double comp = 0.0;
    int64_t within = 0;
    for (double d : dist_gt) {
        comp += d;
        if (d <= threshold) ++within;
    }
    out.comp_m = comp / gt.vertices.size();
    out.comp_ratio_pct = 100.0 * static_cast<double>(within) / gt.vertices.size();
    return out;
}

TriangleMesh cull_mesh(const TriangleMesh& mesh, const UncertaintyGridInfo& grid,
                       const std::vector<uint8_t>& observed, const Aabb& bounds) {
    if (observed.size() != grid.count())
        throw std::invalid_argument("cull_mesh: mask does not match the uncertainty grid");
    TriangleMesh out;
    std::vector<int32_t> vertex_remap(mesh.vertices.size(), -1);
    auto cell_observed = [&](const Vec3& c) {
        int i = std::min(grid.nx - 2, std::max(0, static_cast<int>((c.x - grid.origin.x) / grid.voxel)));
        int j = std::min(grid.ny - 2, std::max(0, static_cast<int>((c.y - grid.origin.y) / grid.voxel)));
        int k = std::min(grid.nz - 2, std::max(0, static_cast<int>((c.z - grid.origin.z) / grid.voxel)));
        for (int v = 0; v < 8; ++v) {
            int dx = v & 1, dy = (v >> 1) & 1, dz = (v >> 2) & 1;
            if (observed[grid.index(i + dx, j + dy, k + dz)]) return true;
        }
        return false;
    };
    for (const auto& t : mesh.triangles) {
        Vec3 c = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
        if (!bounds.contains(c) || !cell_observed(c)) continue;
        std::array<uint32_t, 3> nt;
        for (int v = 0; v < 3; ++v) {
            uint32_t old = t[v];
            if (vertex_remap[old] < 0) {
                vertex_remap[old] = static_cast<int32_t>(out.vertices.size());
                out.vertices.push_back(mesh.vertices[old]);
                if (!mesh.colors.empty()) out.colors.push_back(mesh.colors[old]);
            }
            nt[v] = static_cast<uint32_t>(vertex_remap[old]);
        }
        out.triangles.push_back(nt);
    }
    return out;
}

double sdf_mad(const MapModel& map, const TriangleMesh& gt) {
    if (gt.vertices.empty()) throw std::invalid_argument("sdf_mad: ground-truth mesh is empty");
    std::vector<double> abs_sdf(gt.vertices.size());
#pragma omp parallel
    {
        std::vector<double> gamma(map.cfg.gamma_dim()), valpha(map.cfg.valpha_dim());
        std::vector<double> act(map.layout.geo.act_size());
#pragma omp for schedule(static)
        for (int64_t i = 0; i < static_cast<int64_t>(gt.vertices.size()); ++i) {
            one_blob_encode(gt.vertices[i], map.cfg, gamma.data());
            grid_features(map, gt.vertices[i], valpha.data(), nullptr);
            double s;
            const double* h;
            decode_geometry(map, gamma.data(), valpha.data(), act.data(), s, h);
            abs_sdf[i] = std::fabs(s);
        }
    }
    double acc = 0.0;
    for (double v : abs_sdf) acc += v;
    return 100.0 * acc / gt.vertices.size();
}

}  // namespace recon

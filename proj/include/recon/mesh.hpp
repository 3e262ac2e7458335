#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "recon/geometry.hpp"
#include "recon/scene.hpp"

namespace recon {

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<uint32_t, 3>> triangles;
    std::vector<std::array<uint8_t, 3>> colors;  // optional, per vertex

    bool empty() const { return vertices.empty() || triangles.empty(); }
    double surface_area() const;
};

// Dense scalar samples at voxel centers: value(i,j,k) = f(origin + (ijk+0.5)*voxel).
struct ScalarGrid {
    int nx = 0, ny = 0, nz = 0;
    Vec3 origin;
    double voxel = 0.1;
    std::vector<float> values;

    size_t index(int i, int j, int k) const {
        return (static_cast<size_t>(k) * ny + j) * nx + i;
    }
    float at(int i, int j, int k) const { return values[index(i, j, k)]; }
    Vec3 center(int i, int j, int k) const {
        return origin + Vec3{(i + 0.5) * voxel, (j + 0.5) * voxel, (k + 0.5) * voxel};
    }
};

// Grid dims covering `bounds` at the given voxel size.
void grid_dims_for_bounds(const Aabb& bounds, double voxel, int& nx, int& ny, int& nz);

// 15-case marching cubes at the zero isosurface with linear edge
// interpolation and shared vertices. Deterministic output ordering.
TriangleMesh marching_cubes(const ScalarGrid& grid);

// Ground-truth mesh: scene SDF sampled on a voxel-center lattice over the
// scene bounds, then marching cubes.
TriangleMesh extract_gt_mesh(const SdfScene& scene, double voxel);

// ASCII PLY round trip. Colors written when present (white otherwise).
void save_ply(const TriangleMesh& mesh, const std::string& path);
TriangleMesh load_ply(const std::string& path);

}  // namespace recon

#pragma once

#include <string>
#include <vector>

#include "recon/geometry.hpp"

namespace recon {

enum class PrimitiveKind { Box, Sphere, Cylinder };
enum class CsgOp { Union, Subtract };

// One analytic solid in the scene's CSG list. `dims` meaning per kind:
//   box:      full extents (dx, dy, dz)
//   sphere:   (radius, -, -)
//   cylinder: (radius, height, -), axis along local z
struct ScenePrimitive {
    PrimitiveKind kind = PrimitiveKind::Box;
    CsgOp op = CsgOp::Union;
    Pose pose;
    Vec3 dims;
    Vec3 albedo{0.5, 0.5, 0.5};

    // Signed distance in the primitive's own frame-independent sense:
    // world point -> distance to this solid's surface (negative inside).
    double sdf(const Vec3& world_point) const;
};

struct SdfScene {
    std::vector<ScenePrimitive> primitives;
    Aabb bounds;
    Aabb spawn_region;
    std::string name;

    bool has_subtract() const;
};

// Ground-truth CSG signed distance: primitives combined in listed order,
// min for union, max(d, -d_prim) for subtract.
double scene_sdf(const SdfScene& scene, const Vec3& p);

// CSG distance plus the albedo of the primitive whose surface is nearest.
struct SceneSample {
    double sdf;
    Vec3 albedo;
};
SceneSample scene_sample(const SdfScene& scene, const Vec3& p);

// Parses a scene description JSON document. Throws std::runtime_error with
// the offending field path on malformed or invariant-violating input.
SdfScene build_scene(const std::string& json_text);
SdfScene load_scene_file(const std::string& path);

// Bundled scene specs. `name` is one of bundled_scene_names().
const std::vector<std::string>& bundled_scene_names();
const std::string& bundled_scene_json(const std::string& name);

// Accepts a bundled name or a filesystem path.
SdfScene resolve_scene(const std::string& name_or_path);

}  // namespace recon

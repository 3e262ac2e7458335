#include "recon/scene.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace recon {

namespace {

double sdf_box(const Vec3& p, const Vec3& half) {
    Vec3 q = cwise_abs(p) - half;
    Vec3 qpos = cwise_max(q, Vec3{0, 0, 0});
    double outside = norm(qpos);
    double inside = std::min(std::max(q.x, std::max(q.y, q.z)), 0.0);
    return outside + inside;
}

double sdf_sphere(const Vec3& p, double r) { return norm(p) - r; }

double sdf_cylinder(const Vec3& p, double r, double half_h) {
    double dr = std::sqrt(p.x * p.x + p.y * p.y) - r;
    double dz = std::fabs(p.z) - half_h;
    double outside = std::sqrt(std::max(dr, 0.0) * std::max(dr, 0.0) +
                               std::max(dz, 0.0) * std::max(dz, 0.0));
    double inside = std::min(std::max(dr, dz), 0.0);
    return outside + inside;
}

}  // namespace

double ScenePrimitive::sdf(const Vec3& world_point) const {
    Vec3 p = pose.apply_inverse(world_point);
    switch (kind) {
        case PrimitiveKind::Box:
            return sdf_box(p, dims * 0.5);
        case PrimitiveKind::Sphere:
            return sdf_sphere(p, dims.x);
        case PrimitiveKind::Cylinder:
            return sdf_cylinder(p, dims.x, dims.y * 0.5);
    }
    return std::numeric_limits<double>::infinity();
}

bool SdfScene::has_subtract() const {
    for (const auto& prim : primitives)
        if (prim.op == CsgOp::Subtract) return true;
    return false;
}

double scene_sdf(const SdfScene& scene, const Vec3& p) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& prim : scene.primitives) {
        double dp = prim.sdf(p);
        d = (prim.op == CsgOp::Union) ? std::min(d, dp) : std::max(d, -dp);
    }
    return d;
}

SceneSample scene_sample(const SdfScene& scene, const Vec3& p) {
    double d = std::numeric_limits<double>::infinity();
    // Albedo of the primitive whose surface is nearest in absolute distance.
    double best_abs = std::numeric_limits<double>::infinity();
    Vec3 albedo{0, 0, 0};
    for (const auto& prim : scene.primitives) {
        double dp = prim.sdf(p);
        d = (prim.op == CsgOp::Union) ? std::min(d, dp) : std::max(d, -dp);
        if (std::fabs(dp) < best_abs) {
            best_abs = std::fabs(dp);
            albedo = prim.albedo;
        }
    }
    return {d, albedo};
}

namespace {

using nlohmann::json;

Vec3 parse_vec3(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3)
        throw std::runtime_error("scene spec: " + path + " must be a 3-element array");
    for (int i = 0; i < 3; ++i)
        if (!j[i].is_number()) throw std::runtime_error("scene spec: " + path + " must be numeric");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Aabb parse_aabb(const json& j, const std::string& path) {
    if (!j.is_object() || !j.contains("min") || !j.contains("max"))
        throw std::runtime_error("scene spec: " + path + " must have min/max");
    Aabb box{parse_vec3(j["min"], path + ".min"), parse_vec3(j["max"], path + ".max")};
    if (!(box.min.x < box.max.x && box.min.y < box.max.y && box.min.z < box.max.z))
        throw std::runtime_error("scene spec: " + path + " is degenerate (min >= max)");
    return box;
}

}  // namespace

SdfScene build_scene(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("scene spec: JSON parse failure: ") + e.what());
    }
    SdfScene scene;
    if (doc.contains("name") && doc["name"].is_string()) scene.name = doc["name"].get<std::string>();
    scene.bounds = parse_aabb(doc.at("bounds"), "bounds");
    scene.spawn_region = parse_aabb(doc.at("spawn_region"), "spawn_region");
    if (!scene.bounds.contains(scene.spawn_region))
        throw std::runtime_error("scene spec: spawn_region must lie inside bounds");

    if (!doc.contains("primitives") || !doc["primitives"].is_array() || doc["primitives"].empty())
        throw std::runtime_error("scene spec: primitives must be a non-empty array");

    int idx = 0;
    for (const auto& jp : doc["primitives"]) {
        std::string path = "primitives[" + std::to_string(idx) + "]";
        ScenePrimitive prim;
        std::string kind = jp.at("kind").get<std::string>();
        if (kind == "box")
            prim.kind = PrimitiveKind::Box;
        else if (kind == "sphere")
            prim.kind = PrimitiveKind::Sphere;
        else if (kind == "cylinder")
            prim.kind = PrimitiveKind::Cylinder;
        else
            throw std::runtime_error("scene spec: " + path + ".kind unknown: " + kind);

        std::string op = jp.value("op", std::string("union"));
        if (op == "union")
            prim.op = CsgOp::Union;
        else if (op == "subtract")
            prim.op = CsgOp::Subtract;
        else
            throw std::runtime_error("scene spec: " + path + ".op unknown: " + op);

        prim.pose.pos = parse_vec3(jp.at("center"), path + ".center");
        if (jp.contains("rotation_quat_wxyz")) {
            const auto& jq = jp["rotation_quat_wxyz"];
            if (!jq.is_array() || jq.size() != 4)
                throw std::runtime_error("scene spec: " + path +
                                         ".rotation_quat_wxyz must be a 4-element array");
            prim.pose.rot = {jq[0].get<double>(), jq[1].get<double>(), jq[2].get<double>(),
                             jq[3].get<double>()};
            if (std::fabs(prim.pose.rot.norm() - 1.0) > 1e-6)
                throw std::runtime_error("scene spec: " + path +
                                         ".rotation_quat_wxyz is not a unit quaternion");
        }
        prim.dims = parse_vec3(jp.at("dims"), path + ".dims");
        int needed = (prim.kind == PrimitiveKind::Box) ? 3
                     : (prim.kind == PrimitiveKind::Cylinder) ? 2 : 1;
        for (int i = 0; i < needed; ++i)
            if (!(prim.dims[i] > 0.0))
                throw std::runtime_error("scene spec: " + path + ".dims must be strictly positive");
        if (jp.contains("albedo")) {
            prim.albedo = parse_vec3(jp["albedo"], path + ".albedo");
            for (int i = 0; i < 3; ++i)
                if (prim.albedo[i] < 0.0 || prim.albedo[i] > 1.0)
                    throw std::runtime_error("scene spec: " + path + ".albedo must be in [0,1]");
        }
        scene.primitives.push_back(prim);
        ++idx;
    }

    // Spawn center must be clear of geometry by at least the agent radius.
    constexpr double kAgentRadius = 0.05;
    if (scene_sdf(scene, scene.spawn_region.center()) < kAgentRadius)
        throw std::runtime_error("scene spec: spawn_region center is not clear of geometry");
    return scene;
}

SdfScene load_scene_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("scene spec: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return build_scene(ss.str());
}

SdfScene resolve_scene(const std::string& name_or_path) {
    for (const auto& name : bundled_scene_names())
        if (name == name_or_path) return build_scene(bundled_scene_json(name));
    return load_scene_file(name_or_path);
}

}  // namespace recon

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "recon/mesh.hpp"
#include "recon/sim_render.hpp"
#include "test_support.hpp"

using namespace recon;
namespace rt = recon::testing;

namespace {

SdfScene unit_sphere_scene() {
    return build_scene(R"({
        "bounds": {"min": [-2, -2, -2], "max": [2, 2, 2]},
        "spawn_region": {"min": [1.4, 1.4, 1.4], "max": [1.9, 1.9, 1.9]},
        "primitives": [
            {"kind": "sphere", "op": "union", "center": [0, 0, 0], "dims": [1, 0, 0]}
        ]})");
}

}  // namespace

TEST_CASE("scene_sdf: sphere distances") {
    SdfScene scene = unit_sphere_scene();
    CHECK(scene_sdf(scene, {2, 0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(scene_sdf(scene, {0, 0, 0}) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("scene_sdf: box corner distance cross-checked by surface sampling") {
    SdfScene scene = build_scene(R"({
        "bounds": {"min": [-3, -3, -3], "max": [3, 3, 3]},
        "spawn_region": {"min": [2.2, 2.2, 2.2], "max": [2.5, 2.5, 2.5]},
        "primitives": [
            {"kind": "box", "op": "union", "center": [0, 0, 0], "dims": [2, 2, 2]}
        ]})");
    Vec3 q{1.5, 0.5, 0.0};
    CHECK(scene_sdf(scene, q) == doctest::Approx(0.5).epsilon(1e-12));

    // Oracle: dense sampling of the box surface.
    double best = 1e9;
    const int n = 160;
    for (int face = 0; face < 6; ++face) {
        int axis = face / 2;
        double side = (face % 2) ? 1.0 : -1.0;
        for (int a = 0; a <= n; ++a) {
            for (int b = 0; b <= n; ++b) {
                Vec3 p;
                p[axis] = side;
                p[(axis + 1) % 3] = -1.0 + 2.0 * a / n;
                p[(axis + 2) % 3] = -1.0 + 2.0 * b / n;
                best = std::min(best, norm(p - q));
            }
        }
    }
    CHECK(scene_sdf(scene, q) == doctest::Approx(best).epsilon(1e-3));
}

TEST_CASE("scene_sdf sign matches direct CSG membership on random points") {
    SdfScene scene = resolve_scene("rooms3");
    Rng rng(7);
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
        Vec3 p{rng.uniform(scene.bounds.min.x, scene.bounds.max.x),
               rng.uniform(scene.bounds.min.y, scene.bounds.max.y),
               rng.uniform(scene.bounds.min.z, scene.bounds.max.z)};
        double d = scene_sdf(scene, p);
        if (std::fabs(d) < 1e-6) continue;  // surface-adjacent points have no stable sign
        CHECK((d < 0.0) == rt::inside_csg(scene, p));
        ++checked;
    }
    CHECK(checked > 9900);
}

TEST_CASE("build_scene: three-room apartment center distance") {
    SdfScene scene = resolve_scene("rooms3");
    // Brute-force analytic CSG at the middle-room center, evaluated with the
    // independent membership/sdf path.
    Vec3 center{0, 0, 1.4};
    double d = scene_sdf(scene, center);
    CHECK(d == doctest::Approx(1.4).epsilon(1e-9));
    CHECK(rt::inside_csg(scene, center) == false);
}

TEST_CASE("build_scene: rejects degenerate dims with the primitive index") {
    std::string spec = R"({
        "bounds": {"min": [-2, -2, -2], "max": [2, 2, 2]},
        "spawn_region": {"min": [-1, -1, -1], "max": [1, 1, 1]},
        "primitives": [
            {"kind": "sphere", "op": "union", "center": [0, 0, 0], "dims": [1, 0, 0]},
            {"kind": "box", "op": "union", "center": [0, 0, 0], "dims": [0, 1, 1]}
        ]})";
    CHECK_THROWS_WITH_AS(build_scene(spec),
                         doctest::Contains("primitives[1].dims"), std::runtime_error);
}

TEST_CASE("build_scene: rejects empty primitive list and bad quaternions") {
    CHECK_THROWS_AS(build_scene(R"({
        "bounds": {"min": [-2, -2, -2], "max": [2, 2, 2]},
        "spawn_region": {"min": [-1, -1, -1], "max": [1, 1, 1]},
        "primitives": []})"),
                    std::runtime_error);
    CHECK_THROWS_AS(build_scene("not json"), std::runtime_error);
}

TEST_CASE("render_rgbd: wall one meter ahead gives unit central depth") {
    // Big box wall in front of the camera (+x view direction).
    SdfScene scene = build_scene(R"({
        "bounds": {"min": [-1, -4, -4], "max": [3, 4, 4]},
        "spawn_region": {"min": [-0.5, -0.5, -0.5], "max": [0.5, 0.5, 0.5]},
        "primitives": [
            {"kind": "box", "op": "union", "center": [1.5, 0, 0], "dims": [1, 8, 8]}
        ]})");
    PinholeCamera cam{121, 81, 60.0, 90.0, 0.05, 10.0};
    Pose pose{{0, 0, 0}, look_at({0, 0, 0}, {1, 0, 0})};
    RGBDFrame frame = render_rgbd(scene, cam, pose);
    float center = frame.depth_at(cam.width / 2, cam.height / 2);
    CHECK(center == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("render_rgbd: open space beyond far gives zero depth") {
    SdfScene scene = unit_sphere_scene();
    PinholeCamera cam{32, 24, 60.0, 90.0, 0.05, 10.0};
    Pose pose{{0, 0, 1.8}, look_at({0, 0, 1.8}, {0, 0, 5.0})};  // looking away, into void
    RGBDFrame frame = render_rgbd(scene, cam, pose);
    for (float d : frame.depth) CHECK(d == 0.0f);
}

TEST_CASE("render_rgbd: rooms3 center view is nearly fully valid and matches the ray oracle") {
    SdfScene scene = resolve_scene("rooms3");
    PinholeCamera cam{60, 34, 60.0, 90.0, 0.05, 10.0};
    Pose pose{{0, 0, 1.4}, look_at({0, 0, 1.4}, {1.0, 0.3, 1.3})};
    RGBDFrame frame = render_rgbd(scene, cam, pose);
    int valid = 0;
    for (float d : frame.depth)
        if (d > 0) ++valid;
    CHECK(static_cast<double>(valid) / frame.depth.size() > 0.95);

    // Cross-check a scattering of pixels against the independent CSG ray oracle.
    for (int v = 3; v < cam.height; v += 9) {
        for (int u = 5; u < cam.width; u += 13) {
            Vec3 r_cam = cam.pixel_ray(u, v);
            Vec3 dir = pose.rot.rotate(r_cam);
            double t_oracle = rt::ray_hit_oracle(scene, pose.pos, dir, 12.0);
            float d = frame.depth_at(u, v);
            if (d <= 0.0f) continue;
            REQUIRE(t_oracle > 0.0);
            CHECK(static_cast<double>(d) ==
                  doctest::Approx(t_oracle * r_cam.z).epsilon(2e-3));
        }
    }
}

TEST_CASE("render_rgbd: deterministic across calls") {
    SdfScene scene = resolve_scene("room1");
    PinholeCamera cam{48, 28, 60.0, 90.0, 0.05, 10.0};
    Pose pose{{0.3, -0.2, 1.2}, look_at({0.3, -0.2, 1.2}, {1.5, 1.0, 0.6})};
    RGBDFrame a = render_rgbd(scene, cam, pose);
    RGBDFrame b = render_rgbd(scene, cam, pose);
    CHECK(a.depth == b.depth);
    CHECK(a.color == b.color);
}

TEST_CASE("rendered surface points lie on the zero set") {
    SdfScene scene = resolve_scene("room1");
    PinholeCamera cam{40, 24, 60.0, 90.0, 0.05, 10.0};
    Pose pose{{0.2, 0.4, 1.3}, look_at({0.2, 0.4, 1.3}, {-1.2, -0.8, 0.4})};
    RGBDFrame frame = render_rgbd(scene, cam, pose);
    for (int v = 0; v < cam.height; v += 5) {
        for (int u = 0; u < cam.width; u += 7) {
            float d = frame.depth_at(u, v);
            if (d <= 0) continue;
            Vec3 r_cam = cam.pixel_ray(u, v);
            double t = d / r_cam.z;  // ray length from z-depth
            Vec3 p = pose.pos + t * pose.rot.rotate(r_cam);
            CHECK(std::fabs(scene_sdf(scene, p)) < 2e-4);
        }
    }
}

TEST_CASE("render_equirect_depth: enclosure and free space") {
    SdfScene room = resolve_scene("room1");
    auto pano = render_equirect_depth(room, {0, 0, 1.4}, 16, 32, 50.0);
    CHECK(invalid_fraction(pano) == 0.0);

    SdfScene sphere = unit_sphere_scene();
    auto pano2 = render_equirect_depth(sphere, {0, 0, 1.9}, 16, 32, 50.0);
    // Position outside all geometry: only the small solid angle of the
    // sphere below is hit.
    CHECK(invalid_fraction(pano2) > 0.8);

    CHECK_THROWS_AS(render_equirect_depth(room, {0, 0, 1}, 4, 8, 50.0), std::invalid_argument);
}

TEST_CASE("render_equirect_depth: open doorway to the void has a small invalid fraction") {
    // Single room with a doorway cut through to the outside.
    SdfScene scene = build_scene(R"({
        "bounds": {"min": [-2.1, -2.1, -0.1], "max": [2.1, 2.1, 2.9]},
        "spawn_region": {"min": [-1, -1, 0.5], "max": [1, 1, 2]},
        "primitives": [
            {"kind": "box", "op": "union", "center": [0, 0, 1.4], "dims": [4.4, 4.4, 3.2]},
            {"kind": "box", "op": "subtract", "center": [0, 0, 1.4], "dims": [4.0, 4.0, 2.8]},
            {"kind": "box", "op": "subtract", "center": [2.1, 0, 1.0], "dims": [0.4, 0.9, 2.0]}
        ]})");
    Vec3 pos{0, 0, 1.0};
    auto pano = render_equirect_depth(scene, pos, 64, 128, 50.0);
    double frac = invalid_fraction(pano);
    CHECK(frac > 0.0);
    CHECK(frac < 0.1);

    // Solid-angle oracle: Monte-Carlo escape fraction over uniform directions.
    Rng rng(3);
    int escapes = 0;
    const int n_dirs = 4000;
    for (int i = 0; i < n_dirs; ++i) {
        double z = rng.uniform(-1.0, 1.0);
        double phi = rng.uniform(0.0, 2 * M_PI);
        double r = std::sqrt(std::max(0.0, 1 - z * z));
        Vec3 dir{r * std::cos(phi), r * std::sin(phi), z};
        if (rt::ray_hit_oracle(scene, pos, dir, 6.0, 2e-3) < 0.0) ++escapes;
    }
    double oracle_frac = static_cast<double>(escapes) / n_dirs;
    CHECK(frac == doctest::Approx(oracle_frac).epsilon(0.35));
}

TEST_CASE("extract_gt_mesh: sphere vertices sit at the right radius") {
    SdfScene scene = unit_sphere_scene();
    TriangleMesh mesh = extract_gt_mesh(scene, 0.05);
    REQUIRE(!mesh.empty());
    for (const auto& v : mesh.vertices) CHECK(std::fabs(norm(v) - 1.0) < 0.05);
}

TEST_CASE("extract_gt_mesh: empty scene gives an empty mesh") {
    // Solid entirely outside the bounds box.
    SdfScene scene = build_scene(R"({
        "bounds": {"min": [-1, -1, -1], "max": [1, 1, 1]},
        "spawn_region": {"min": [-0.5, -0.5, -0.5], "max": [0.5, 0.5, 0.5]},
        "primitives": [
            {"kind": "sphere", "op": "union", "center": [10, 0, 0], "dims": [1, 0, 0]}
        ]})");
    TriangleMesh mesh = extract_gt_mesh(scene, 0.1);
    CHECK(mesh.empty());
}

TEST_CASE("extract_gt_mesh: box surface area within 5% of analytic") {
    SdfScene scene = build_scene(R"({
        "bounds": {"min": [-1.63, -1.33, -1.13], "max": [1.63, 1.33, 1.13]},
        "spawn_region": {"min": [1.2, 1.0, 0.8], "max": [1.5, 1.2, 1.0]},
        "primitives": [
            {"kind": "box", "op": "union", "center": [0, 0, 0], "dims": [2.0, 1.6, 1.2]}
        ]})");
    TriangleMesh mesh = extract_gt_mesh(scene, 0.02);
    REQUIRE(!mesh.empty());
    double analytic = 2 * (2.0 * 1.6 + 2.0 * 1.2 + 1.6 * 1.2);
    CHECK(mesh.surface_area() == doctest::Approx(analytic).epsilon(0.05));
}

TEST_CASE("bundled scene files match the embedded specs") {
#ifdef RECON_SOURCE_DIR
    for (const auto& name : bundled_scene_names()) {
        SdfScene from_file = load_scene_file(std::string(RECON_SOURCE_DIR) + "/scenes/" + name +
                                             ".json");
        SdfScene embedded = build_scene(bundled_scene_json(name));
        CHECK(from_file.primitives.size() == embedded.primitives.size());
        CHECK(norm(from_file.bounds.min - embedded.bounds.min) == 0.0);
        CHECK(norm(from_file.bounds.max - embedded.bounds.max) == 0.0);
    }
#endif
}

TEST_CASE("spawn regions are clear of geometry") {
    for (const auto& name : bundled_scene_names()) {
        SdfScene scene = resolve_scene(name);
        CHECK(scene.bounds.contains(scene.spawn_region));
        CHECK(scene_sdf(scene, scene.spawn_region.center()) >= 0.05);
    }
}

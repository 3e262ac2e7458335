#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "recon/mapping.hpp"
#include "recon/mesh.hpp"
#include "recon/metrics.hpp"
#include "recon/planner.hpp"
#include "recon/runner.hpp"
#include "recon/sim_render.hpp"

namespace py = pybind11;
using namespace recon;

namespace {

Pose pose_from_args(const std::array<double, 3>& pos, const std::array<double, 4>& quat_wxyz) {
    Pose p;
    p.pos = {pos[0], pos[1], pos[2]};
    p.rot = Quat{quat_wxyz[0], quat_wxyz[1], quat_wxyz[2], quat_wxyz[3]}.normalized();
    return p;
}

py::tuple mesh_to_numpy(const TriangleMesh& mesh) {
    py::array_t<double> verts({static_cast<py::ssize_t>(mesh.vertices.size()),
                               static_cast<py::ssize_t>(3)});
    auto v = verts.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < v.shape(0); ++i) {
        v(i, 0) = mesh.vertices[i].x;
        v(i, 1) = mesh.vertices[i].y;
        v(i, 2) = mesh.vertices[i].z;
    }
    py::array_t<uint32_t> tris({static_cast<py::ssize_t>(mesh.triangles.size()),
                                static_cast<py::ssize_t>(3)});
    auto t = tris.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < t.shape(0); ++i)
        for (int k = 0; k < 3; ++k) t(i, k) = mesh.triangles[i][k];
    return py::make_tuple(verts, tris);
}

TriangleMesh mesh_from_numpy(py::array_t<double> verts, py::array_t<uint32_t> tris) {
    TriangleMesh mesh;
    auto v = verts.unchecked<2>();
    auto t = tris.unchecked<2>();
    mesh.vertices.reserve(v.shape(0));
    for (py::ssize_t i = 0; i < v.shape(0); ++i)
        mesh.vertices.push_back({v(i, 0), v(i, 1), v(i, 2)});
    mesh.triangles.reserve(t.shape(0));
    for (py::ssize_t i = 0; i < t.shape(0); ++i)
        mesh.triangles.push_back({t(i, 0), t(i, 1), t(i, 2)});
    return mesh;
}

RunConfig config_from_kwargs(const py::dict& kw) {
    // Route through the key/value parser so Python and config files share one
    // set of keys.
    std::string text;
    for (auto item : kw) {
        std::string key = py::str(item.first);
        py::handle val = item.second;
        std::string sval;
        if (py::isinstance<py::bool_>(val))
            sval = py::cast<bool>(val) ? "true" : "false";
        else if (py::isinstance<py::str>(val))
            sval = "\"" + py::cast<std::string>(val) + "\"";
        else
            sval = py::str(val);
        text += key + " = " + sval + "\n";
    }
    return parse_run_config(text);
}

py::dict metrics_to_dict(const MetricsReport& m) {
    py::dict d;
    d["acc_cm"] = m.acc_cm;
    d["comp_cm"] = m.comp_cm;
    d["comp_ratio_pct"] = m.comp_ratio_pct;
    d["mad_cm"] = m.mad_cm;
    d["pred_vertices"] = m.pred_vertices;
    d["gt_vertices"] = m.gt_vertices;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Active neural surface reconstruction core";

    py::class_<SdfScene>(m, "Scene")
        .def_property_readonly("name", [](const SdfScene& s) { return s.name; })
        .def_property_readonly("bounds_min",
                               [](const SdfScene& s) {
                                   return std::array<double, 3>{s.bounds.min.x, s.bounds.min.y,
                                                                s.bounds.min.z};
                               })
        .def_property_readonly("bounds_max",
                               [](const SdfScene& s) {
                                   return std::array<double, 3>{s.bounds.max.x, s.bounds.max.y,
                                                                s.bounds.max.z};
                               })
        .def_property_readonly("num_primitives",
                               [](const SdfScene& s) { return s.primitives.size(); });

    py::class_<MapModel>(m, "MapHandle")
        .def("sdf",
             [](const MapModel& map, py::array_t<double> pts) {
                 auto p = pts.unchecked<2>();
                 py::array_t<double> out(p.shape(0));
                 auto o = out.mutable_unchecked<1>();
                 for (py::ssize_t i = 0; i < p.shape(0); ++i)
                     o(i) = query_sdf(map, {p(i, 0), p(i, 1), p(i, 2)});
                 return out;
             })
        .def("uncertainty", [](const MapModel& map, py::array_t<double> pts) {
            auto p = pts.unchecked<2>();
            py::array_t<double> out(p.shape(0));
            auto o = out.mutable_unchecked<1>();
            for (py::ssize_t i = 0; i < p.shape(0); ++i)
                o(i) = query_uncertainty(map, {p(i, 0), p(i, 1), p(i, 2)});
            return out;
        });

    m.def("bundled_scene_names", [] { return bundled_scene_names(); });

    m.def(
        "load_scene", [](const std::string& name_or_path) { return resolve_scene(name_or_path); },
        py::arg("name_or_path"), "Load a bundled scene by name or a scene JSON file by path");

    m.def(
        "scene_sdf",
        [](const SdfScene& scene, py::array_t<double> pts) {
            auto p = pts.unchecked<2>();
            py::array_t<double> out(p.shape(0));
            auto o = out.mutable_unchecked<1>();
            for (py::ssize_t i = 0; i < p.shape(0); ++i)
                o(i) = scene_sdf(scene, {p(i, 0), p(i, 1), p(i, 2)});
            return out;
        },
        py::arg("scene"), py::arg("points"), "Ground-truth signed distance at Nx3 points");

    m.def(
        "render_rgbd",
        [](const SdfScene& scene, const std::array<double, 3>& pos,
           const std::array<double, 4>& quat_wxyz, int width, int height, double fov_v,
           double fov_h, double near, double far) {
            PinholeCamera cam{width, height, fov_v, fov_h, near, far};
            RGBDFrame f = render_rgbd(scene, cam, pose_from_args(pos, quat_wxyz));
            py::array_t<float> color({height, width, 3});
            py::array_t<float> depth({height, width});
            std::copy(f.color.begin(), f.color.end(), color.mutable_data());
            std::copy(f.depth.begin(), f.depth.end(), depth.mutable_data());
            return py::make_tuple(color, depth);
        },
        py::arg("scene"), py::arg("position"), py::arg("quat_wxyz"), py::arg("width") = 240,
        py::arg("height") = 136, py::arg("fov_v") = 60.0, py::arg("fov_h") = 90.0,
        py::arg("near") = 0.05, py::arg("far") = 10.0,
        "Render a posed RGB-D frame; depth is z-depth in meters, 0 = invalid");

    m.def(
        "render_equirect_depth",
        [](const SdfScene& scene, const std::array<double, 3>& pos, int rows, int cols) {
            auto pano = render_equirect_depth(scene, {pos[0], pos[1], pos[2]}, rows, cols, 50.0);
            py::array_t<float> out({rows, cols});
            std::copy(pano.begin(), pano.end(), out.mutable_data());
            return out;
        },
        py::arg("scene"), py::arg("position"), py::arg("rows") = 32, py::arg("cols") = 64);

    m.def(
        "extract_gt_mesh",
        [](const SdfScene& scene, double voxel) { return mesh_to_numpy(extract_gt_mesh(scene, voxel)); },
        py::arg("scene"), py::arg("voxel") = 0.05,
        "Marching-cubes mesh of the scene SDF: (vertices Nx3, triangles Mx3)");

    m.def(
        "mesh_metrics",
        [](py::array_t<double> pred_verts, py::array_t<uint32_t> pred_tris,
           py::array_t<double> gt_verts, py::array_t<uint32_t> gt_tris, double threshold) {
            MeshDistances d = mesh_metrics(mesh_from_numpy(pred_verts, pred_tris),
                                           mesh_from_numpy(gt_verts, gt_tris), threshold);
            py::dict out;
            out["acc_cm"] = 100.0 * d.acc_m;
            out["comp_cm"] = 100.0 * d.comp_m;
            out["comp_ratio_pct"] = d.comp_ratio_pct;
            return out;
        },
        py::arg("pred_vertices"), py::arg("pred_triangles"), py::arg("gt_vertices"),
        py::arg("gt_triangles"), py::arg("threshold") = 0.05);

    m.def(
        "plan_path",
        [](const SdfScene& scene, const std::array<double, 3>& start,
           const std::array<double, 3>& goal, bool vanilla, uint64_t seed) {
            ScalarGrid vs = build_sdf_volume_oracle(scene, scene.bounds, 0.1);
            RrtParams params;
            params.vanilla = vanilla;
            params.max_iterations = vanilla ? 60000 : 4000;
            params.seed = seed;
            PlanResult res = plan_path(vs, {start[0], start[1], start[2]},
                                       {goal[0], goal[1], goal[2]}, params);
            py::dict out;
            out["reached"] = res.reached;
            out["iterations"] = res.iterations;
            out["nodes"] = res.nodes;
            out["path_length"] = res.path.length;
            py::array_t<double> wps({static_cast<py::ssize_t>(res.path.waypoints.size()),
                                     static_cast<py::ssize_t>(3)});
            auto w = wps.mutable_unchecked<2>();
            for (py::ssize_t i = 0; i < w.shape(0); ++i) {
                w(i, 0) = res.path.waypoints[i].x;
                w(i, 1) = res.path.waypoints[i].y;
                w(i, 2) = res.path.waypoints[i].z;
            }
            out["waypoints"] = wps;
            return out;
        },
        py::arg("scene"), py::arg("start"), py::arg("goal"), py::arg("vanilla") = false,
        py::arg("seed") = 0, "Plan on the ground-truth SDF volume");

    m.def(
        "run_episode",
        [](const py::dict& config) {
            RunConfig cfg = config_from_kwargs(config);
            RunResult res = run_episode(cfg);
            if (!cfg.out_dir.empty()) export_run(res, cfg, cfg.out_dir);
            py::dict out = metrics_to_dict(res.metrics);
            out["steps"] = res.log.steps.size();
            out["events"] = res.log.events.size();
            out["aborted"] = res.log.aborted;
            out["map"] = py::cast(std::move(res.map));
            return out;
        },
        py::arg("config"),
        "Run a full episode; config keys mirror the CLI config file. Writes artifacts to 'out'.");

    m.def(
        "replay_trajectory",
        [](const py::dict& config, py::array_t<double> positions, py::array_t<double> quats) {
            RunConfig cfg = config_from_kwargs(config);
            auto p = positions.unchecked<2>();
            auto q = quats.unchecked<2>();
            std::vector<Pose> traj;
            for (py::ssize_t i = 0; i < p.shape(0); ++i)
                traj.push_back(pose_from_args({p(i, 0), p(i, 1), p(i, 2)},
                                              {q(i, 0), q(i, 1), q(i, 2), q(i, 3)}));
            RunResult res = replay_mapping(cfg, traj);
            py::dict out = metrics_to_dict(res.metrics);
            out["aborted"] = res.log.aborted;
            out["map"] = py::cast(std::move(res.map));
            return out;
        },
        py::arg("config"), py::arg("positions"), py::arg("quats_wxyz"),
        "Mapping-only replay of a fixed pose trajectory");

#ifdef VERSION_INFO
    m.attr("__version__") = VERSION_INFO;
#else
    m.attr("__version__") = "0.1.0";
#endif
}

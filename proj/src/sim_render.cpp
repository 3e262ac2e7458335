#include "recon/sim_render.hpp"

#include <stdexcept>

namespace recon {

namespace {
constexpr int kMaxSteps = 256;
constexpr double kHitEps = 1e-4;
}  // namespace

void PinholeCamera::validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("camera: resolution must be positive");
    if (!(near > 0.0 && near < far)) throw std::invalid_argument("camera: require 0 < near < far");
    if (!(fov_v_deg > 0.0 && fov_v_deg < 180.0 && fov_h_deg > 0.0 && fov_h_deg < 180.0))
        throw std::invalid_argument("camera: fov must be in (0, 180) degrees");
}

double trace_ray(const SdfScene& scene, const Vec3& origin, const Vec3& dir, double t_max) {
    const double step_scale = scene.has_subtract() ? 0.8 : 1.0;
    double t = 0.0;
    for (int i = 0; i < kMaxSteps; ++i) {
        Vec3 p = origin + t * dir;
        double d = scene_sdf(scene, p);
        if (d < kHitEps) return t;
        t += step_scale * d;
        if (t > t_max) return -1.0;
    }
    return -1.0;
}

RGBDFrame render_rgbd(const SdfScene& scene, const PinholeCamera& camera, const Pose& pose) {
    camera.validate();
    if (std::fabs(pose.rot.norm() - 1.0) > 1e-6)
        throw std::invalid_argument("render_rgbd: pose quaternion must be normalized");
    RGBDFrame frame;
    frame.width = camera.width;
    frame.height = camera.height;
    frame.color.assign(static_cast<size_t>(camera.width) * camera.height * 3, 0.0f);
    frame.depth.assign(static_cast<size_t>(camera.width) * camera.height, 0.0f);
    frame.pose = pose;

#pragma omp parallel for schedule(dynamic, 4)
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            Vec3 dir_cam = camera.pixel_ray(u, v);
            Vec3 dir = pose.rot.rotate(dir_cam);
            // Cap ray length so z-depth stays below far.
            double t_max = camera.far / dir_cam.z + 1.0;
            double t = trace_ray(scene, pose.pos, dir, t_max);
            if (t < 0.0) continue;
            double z_depth = t * dir_cam.z;
            if (z_depth < camera.near || z_depth > camera.far) continue;
            size_t pix = static_cast<size_t>(v) * camera.width + u;
            frame.depth[pix] = static_cast<float>(z_depth);
            Vec3 albedo = scene_sample(scene, pose.pos + t * dir).albedo;
            frame.color[pix * 3 + 0] = static_cast<float>(albedo.x);
            frame.color[pix * 3 + 1] = static_cast<float>(albedo.y);
            frame.color[pix * 3 + 2] = static_cast<float>(albedo.z);
        }
    }
    return frame;
}

std::vector<float> render_equirect_depth(const SdfScene& scene, const Vec3& position, int rows,
                                         int cols, double t_max) {
    if (rows < 8 || cols < 16)
        throw std::invalid_argument("render_equirect_depth: resolution must be at least 8x16");
    std::vector<float> depth(static_cast<size_t>(rows) * cols, 0.0f);
#pragma omp parallel for schedule(dynamic, 1)
    for (int r = 0; r < rows; ++r) {
        double elevation = M_PI_2 - M_PI * (r + 0.5) / rows;
        double ce = std::cos(elevation), se = std::sin(elevation);
        for (int c = 0; c < cols; ++c) {
            double azimuth = -M_PI + 2.0 * M_PI * (c + 0.5) / cols;
            Vec3 dir{ce * std::cos(azimuth), ce * std::sin(azimuth), se};
            double t = trace_ray(scene, position, dir, t_max);
            if (t > 0.0) depth[static_cast<size_t>(r) * cols + c] = static_cast<float>(t);
        }
    }
    return depth;
}

double invalid_fraction(const std::vector<float>& panorama) {
    if (panorama.empty()) return 1.0;
    size_t invalid = 0;
    for (float d : panorama)
        if (d <= 0.0f) ++invalid;
    return static_cast<double>(invalid) / static_cast<double>(panorama.size());
}

}  // namespace recon

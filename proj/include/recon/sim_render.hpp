#pragma once

#include "recon/camera.hpp"
#include "recon/scene.hpp"

namespace recon {

// Sphere-tracing hit query along o + t*dir (dir unit). Returns ray length t
// of the surface hit, or a negative value on miss. Conservative 0.8 step
// factor when the scene contains subtractions (CSG max is not 1-Lipschitz).
double trace_ray(const SdfScene& scene, const Vec3& origin, const Vec3& dir, double t_max);

// Renders a posed RGB-D frame by per-pixel sphere tracing. Deterministic and
// independent of pixel evaluation order.
RGBDFrame render_rgbd(const SdfScene& scene, const PinholeCamera& camera, const Pose& pose);

// Full 360x180 depth panorama (ray lengths, 0 on miss) from a point.
// rows >= 8 and cols >= 16 required.
std::vector<float> render_equirect_depth(const SdfScene& scene, const Vec3& position, int rows,
                                         int cols, double t_max);

double invalid_fraction(const std::vector<float>& panorama);

}  // namespace recon

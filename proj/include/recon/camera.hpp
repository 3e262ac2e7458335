#pragma once

#include <vector>

#include "recon/geometry.hpp"

namespace recon {

// Pinhole model. Camera frame: x right, y down, z forward (optical axis).
// Depth images store z-depth: the distance along the optical axis, not the
// length of the viewing ray.
struct PinholeCamera {
    int width = 240;
    int height = 136;
    double fov_v_deg = 60.0;
    double fov_h_deg = 90.0;
    double near = 0.05;
    double far = 10.0;

    void validate() const;
    double fx() const { return 0.5 * width / std::tan(0.5 * deg_to_rad(fov_h_deg)); }
    double fy() const { return 0.5 * height / std::tan(0.5 * deg_to_rad(fov_v_deg)); }
    double cx() const { return 0.5 * width; }
    double cy() const { return 0.5 * height; }

    // Unit ray direction in camera frame through pixel center (u, v).
    Vec3 pixel_ray(int u, int v) const {
        Vec3 d{(u + 0.5 - cx()) / fx(), (v + 0.5 - cy()) / fy(), 1.0};
        return d / norm(d);
    }
};

struct RGBDFrame {
    int width = 0;
    int height = 0;
    std::vector<float> color;  // height*width*3, row-major, [0,1]
    std::vector<float> depth;  // height*width z-depth in meters, 0 = invalid
    Pose pose;                 // world-from-camera

    float depth_at(int u, int v) const { return depth[v * width + u]; }
    const float* color_at(int u, int v) const { return &color[(v * width + u) * 3]; }
};

}  // namespace recon

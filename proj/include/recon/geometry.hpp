#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace recon {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double norm2(const Vec3& v) { return dot(v, v); }
inline Vec3 normalized(const Vec3& v) {
    double n = norm(v);
    if (n < 1e-12) throw std::invalid_argument("cannot normalize near-zero vector");
    return v / n;
}
inline Vec3 cwise_min(const Vec3& a, const Vec3& b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 cwise_max(const Vec3& a, const Vec3& b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}
inline Vec3 cwise_abs(const Vec3& v) { return {std::fabs(v.x), std::fabs(v.y), std::fabs(v.z)}; }

// Unit quaternion, scalar-first (w, x, y, z).
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quat normalized() const {
        double n = norm();
        if (n < 1e-12) throw std::invalid_argument("cannot normalize near-zero quaternion");
        return {w / n, x / n, y / n, z / n};
    }

    Quat conjugate() const { return {w, -x, -y, -z}; }

    Quat operator*(const Quat& q) const {
        return {w * q.w - x * q.x - y * q.y - z * q.z,
                w * q.x + x * q.w + y * q.z - z * q.y,
                w * q.y - x * q.z + y * q.w + z * q.x,
                w * q.z + x * q.y - y * q.x + z * q.w};
    }

    Vec3 rotate(const Vec3& v) const {
        // q * (0,v) * q^-1 expanded.
        Vec3 u{x, y, z};
        Vec3 t = 2.0 * cross(u, v);
        return v + w * t + cross(u, t);
    }
};

inline double dot(const Quat& a, const Quat& b) {
    return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

// Shortest rotation angle between two unit quaternions, radians.
inline double quat_angle(const Quat& a, const Quat& b) {
    double d = std::min(1.0, std::fabs(dot(a, b)));
    return 2.0 * std::acos(d);
}

inline Quat quat_from_axis_angle(const Vec3& axis, double angle) {
    Vec3 u = normalized(axis);
    double s = std::sin(angle * 0.5);
    return {std::cos(angle * 0.5), u.x * s, u.y * s, u.z * s};
}

// Spherical linear interpolation; takes the shorter arc.
inline Quat slerp(const Quat& a, const Quat& b, double t) {
    Quat q = b;
    double d = dot(a, b);
    if (d < 0.0) {
        d = -d;
        q = {-b.w, -b.x, -b.y, -b.z};
    }
    if (d > 1.0 - 1e-10) {
        // Nearly parallel: lerp and renormalize.
        Quat r{a.w + t * (q.w - a.w), a.x + t * (q.x - a.x), a.y + t * (q.y - a.y),
               a.z + t * (q.z - a.z)};
        return r.normalized();
    }
    double theta = std::acos(d);
    double sa = std::sin((1.0 - t) * theta) / std::sin(theta);
    double sb = std::sin(t * theta) / std::sin(theta);
    return Quat{sa * a.w + sb * q.w, sa * a.x + sb * q.x, sa * a.y + sb * q.y,
                sa * a.z + sb * q.z}.normalized();
}

// Rigid transform: x_world = rot * x_local + pos.
struct Pose {
    Vec3 pos;
    Quat rot;

    Vec3 apply(const Vec3& p) const { return rot.rotate(p) + pos; }
    Vec3 apply_inverse(const Vec3& p) const { return rot.conjugate().rotate(p - pos); }
};

struct Aabb {
    Vec3 min;
    Vec3 max;

    Vec3 extent() const { return max - min; }
    Vec3 center() const { return (min + max) * 0.5; }
    bool contains(const Vec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
               p.z <= max.z;
    }
    bool contains(const Aabb& o) const { return contains(o.min) && contains(o.max); }
    Vec3 clamp(const Vec3& p) const { return cwise_min(cwise_max(p, min), max); }
};

// Roll-free orientation looking from `eye` toward `target`; world up is +z,
// camera frame is x-right / y-down / z-forward.
inline Quat look_at(const Vec3& eye, const Vec3& target) {
    Vec3 fwd = target - eye;
    double n = norm(fwd);
    if (n < 1e-12) return Quat{};
    fwd = fwd / n;
    Vec3 up{0.0, 0.0, 1.0};
    if (std::fabs(dot(fwd, up)) > 1.0 - 1e-9) up = Vec3{1.0, 0.0, 0.0};
    Vec3 xc = normalized(cross(fwd, up));
    Vec3 yc = cross(fwd, xc);
    // Column-major rotation matrix [xc yc fwd] -> quaternion.
    double m00 = xc.x, m01 = yc.x, m02 = fwd.x;
    double m10 = xc.y, m11 = yc.y, m12 = fwd.y;
    double m20 = xc.z, m21 = yc.z, m22 = fwd.z;
    double tr = m00 + m11 + m22;
    Quat q;
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q = {0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s};
    } else if (m00 > m11 && m00 > m22) {
        double s = std::sqrt(1.0 + m00 - m11 - m22) * 2.0;
        q = {(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s};
    } else if (m11 > m22) {
        double s = std::sqrt(1.0 + m11 - m00 - m22) * 2.0;
        q = {(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s};
    } else {
        double s = std::sqrt(1.0 + m22 - m00 - m11) * 2.0;
        q = {(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s};
    }
    return q.normalized();
}

inline double deg_to_rad(double d) { return d * M_PI / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / M_PI; }

}  // namespace recon

#pragma once

#include <jof/common.hpp>
#include <jof/dual.hpp>

#include <Eigen/Dense>

#include <array>
#include <string>
#include <vector>

namespace jof {

// Pixel convention: (u,v) from the image top-left, +u right, +v down.
// World convention: +y up; the camera sits on a sphere around the origin and
// looks at the origin. azimuth=0, elevation=0 places it at (0,0,-distance);
// positive azimuth swings it toward +x, positive elevation lifts it toward +y.
// At elevation ±90° the up reference (0,1,0) degenerates and (0,0,1) is used.
struct PoseParams {
    double azimuth = 0.0;   // radians
    double elevation = 0.0; // radians
    double distance = 2.0;
    double focal = 64.0; // pixels
    std::array<double, 2> principal = {0.0, 0.0};
};

std::vector<PoseParams> load_poses(const std::string& path);
void save_poses(const std::string& path, const std::vector<PoseParams>& poses);

using Vec3 = std::array<double, 3>;

struct Ray {
    Vec3 origin;
    Vec3 dir; // unit length
};

// Homogeneous 4x4 projection (intrinsics x extrinsics) with cached inverse.
class Projection {
public:
    static Projection from_matrix(const Eigen::Matrix4d& P);

    const Eigen::Matrix4d& matrix() const { return P_; }
    const Eigen::Matrix4d& inverse() const { return P_inv_; }

    // world point -> (u, v, d); d is camera depth
    Vec3 project(const Vec3& x) const;
    // (u, v, d) -> world point, x = P_inv (u d, v d, d, 1)
    Vec3 backproject(double u, double v, double d) const;
    Vec3 camera_center() const { return center_; }
    Ray pixel_ray(double u, double v) const;

private:
    Eigen::Matrix4d P_, P_inv_;
    Vec3 center_;
};

Eigen::Matrix4d intrinsics_matrix(double focal, double u0, double v0);
Eigen::Matrix4d extrinsics_matrix(const PoseParams& pose);
Projection compose_projection(const PoseParams& pose, int width, int height);

// --- pose-differentiable paths -------------------------------------------
// Scalar-generic reimplementation of compose+project / compose+backproject,
// used with Dual<3> seeded on (azimuth, elevation, distance). Values agree
// with the matrix path to floating-point roundoff.

template <typename S>
struct PoseOf {
    S azimuth, elevation, distance;
    double focal;
    std::array<double, 2> principal;
};

using PoseDual = PoseOf<Dual<3>>;

inline PoseDual seed_pose(const PoseParams& p) {
    return {Dual<3>::seed(p.azimuth, 0), Dual<3>::seed(p.elevation, 1),
            Dual<3>::seed(p.distance, 2), p.focal, p.principal};
}

template <typename S>
struct CameraBasis {
    std::array<S, 3> center, x_axis, y_axis, z_axis;
};

template <typename S>
CameraBasis<S> camera_basis(const PoseOf<S>& pose) {
    using std::cos;
    using std::sin;
    const S ca = cos(pose.azimuth), sa = sin(pose.azimuth);
    const S ce = cos(pose.elevation), se = sin(pose.elevation);
    CameraBasis<S> b;
    b.center = {pose.distance * sa * ce, pose.distance * se, S(-1.0) * pose.distance * ca * ce};
    // z looks from the camera toward the origin
    b.z_axis = {S(-1.0) * sa * ce, S(-1.0) * se, ca * ce};
    const double ce_val = value_of(ce);
    std::array<S, 3> up;
    if (std::abs(ce_val) < 1e-9) {
        up = {S(0.0), S(0.0), S(1.0)};
    } else {
        up = {S(0.0), S(1.0), S(0.0)};
    }
    // remove the along-axis component, flip so +v points down in the image
    const S dp = up[0] * b.z_axis[0] + up[1] * b.z_axis[1] + up[2] * b.z_axis[2];
    std::array<S, 3> down = {dp * b.z_axis[0] - up[0], dp * b.z_axis[1] - up[1],
                             dp * b.z_axis[2] - up[2]};
    S n = sqrt(down[0] * down[0] + down[1] * down[1] + down[2] * down[2]);
    b.y_axis = {down[0] / n, down[1] / n, down[2] / n};
    b.x_axis = {b.y_axis[1] * b.z_axis[2] - b.y_axis[2] * b.z_axis[1],
                b.y_axis[2] * b.z_axis[0] - b.y_axis[0] * b.z_axis[2],
                b.y_axis[0] * b.z_axis[1] - b.y_axis[1] * b.z_axis[0]};
    return b;
}

template <typename S>
std::array<S, 3> pose_project(const PoseOf<S>& pose, const Vec3& x) {
    const CameraBasis<S> b = camera_basis(pose);
    std::array<S, 3> rel = {S(x[0]) - b.center[0], S(x[1]) - b.center[1], S(x[2]) - b.center[2]};
    auto dot = [&](const std::array<S, 3>& a) {
        return a[0] * rel[0] + a[1] * rel[1] + a[2] * rel[2];
    };
    const S xc = dot(b.x_axis), yc = dot(b.y_axis), zc = dot(b.z_axis);
    if (std::abs(value_of(zc)) < 1e-9) throw NumericError("point at camera plane");
    return {S(pose.focal) * xc / zc + S(pose.principal[0]),
            S(pose.focal) * yc / zc + S(pose.principal[1]), zc};
}

template <typename S>
std::array<S, 3> pose_backproject(const PoseOf<S>& pose, double u, double v, double d) {
    const CameraBasis<S> b = camera_basis(pose);
    const S xc = S((u - pose.principal[0]) / pose.focal) * S(d);
    const S yc = S((v - pose.principal[1]) / pose.focal) * S(d);
    const S zc = S(d);
    std::array<S, 3> out;
    for (int i = 0; i < 3; ++i)
        out[i] = b.center[i] + b.x_axis[i] * xc + b.y_axis[i] * yc + b.z_axis[i] * zc;
    return out;
}

} // namespace jof

#include <jof/camera.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace jof {

std::vector<PoseParams> load_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open pose file: " + path);
    std::vector<PoseParams> poses;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        PoseParams p;
        if (!(ss >> p.azimuth >> p.elevation >> p.distance >> p.focal >> p.principal[0] >>
              p.principal[1]))
            throw IoError("malformed pose line in " + path + ": " + line);
        poses.push_back(p);
    }
    return poses;
}

void save_poses(const std::string& path, const std::vector<PoseParams>& poses) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write pose file: " + path);
    out.precision(17);
    for (const auto& p : poses)
        out << p.azimuth << " " << p.elevation << " " << p.distance << " " << p.focal << " "
            << p.principal[0] << " " << p.principal[1] << "\n";
}

Projection Projection::from_matrix(const Eigen::Matrix4d& P) {
    if (!P.allFinite()) throw NumericError("projection matrix has non-finite entries");
    Eigen::FullPivLU<Eigen::Matrix4d> lu(P);
    if (!lu.isInvertible()) throw UsageError("projection matrix is singular");
    Projection proj;
    proj.P_ = P;
    proj.P_inv_ = lu.inverse();
    // camera center: the point mapped to zero depth on the optical axis for
    // every (u, v); equivalently P_inv applied to (0, 0, 0, 1)
    Eigen::Vector4d c = proj.P_inv_ * Eigen::Vector4d(0, 0, 0, 1);
    if (std::abs(c[3]) < 1e-12) throw UsageError("projection has no finite camera center");
    proj.center_ = {c[0] / c[3], c[1] / c[3], c[2] / c[3]};
    return proj;
}

Vec3 Projection::project(const Vec3& x) const {
    Eigen::Vector4d h = P_ * Eigen::Vector4d(x[0], x[1], x[2], 1.0);
    const double w = h[3];
    if (std::abs(w) < 1e-12) throw NumericError("projection produced degenerate homogeneous point");
    const double d = h[2] / w;
    if (std::abs(d) < 1e-9) throw NumericError("point at camera plane");
    return {h[0] / w / d, h[1] / w / d, d};
}

Vec3 Projection::backproject(double u, double v, double d) const {
    Eigen::Vector4d h = P_inv_ * Eigen::Vector4d(u * d, v * d, d, 1.0);
    if (std::abs(h[3]) < 1e-12) throw NumericError("backprojection produced point at infinity");
    return {h[0] / h[3], h[1] / h[3], h[2] / h[3]};
}

Ray Projection::pixel_ray(double u, double v) const {
    const Vec3 p = backproject(u, v, 1.0);
    Vec3 dir = {p[0] - center_[0], p[1] - center_[1], p[2] - center_[2]};
    const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    if (n < 1e-12) throw NumericError("degenerate pixel ray");
    return {center_, {dir[0] / n, dir[1] / n, dir[2] / n}};
}

Eigen::Matrix4d intrinsics_matrix(double focal, double u0, double v0) {
    if (!(focal > 0.0)) throw UsageError("focal length must be positive");
    Eigen::Matrix4d K = Eigen::Matrix4d::Identity();
    K(0, 0) = focal;
    K(1, 1) = focal;
    K(0, 2) = u0;
    K(1, 2) = v0;
    return K;
}

Eigen::Matrix4d extrinsics_matrix(const PoseParams& pose) {
    if (!(pose.distance > 0.0)) throw UsageError("camera distance must be positive");
    const PoseOf<double> p{pose.azimuth, pose.elevation, pose.distance, pose.focal, pose.principal};
    const CameraBasis<double> b = camera_basis(p);
    Eigen::Matrix4d E = Eigen::Matrix4d::Identity();
    Eigen::Matrix3d R;
    R.row(0) = Eigen::Vector3d(b.x_axis[0], b.x_axis[1], b.x_axis[2]).transpose();
    R.row(1) = Eigen::Vector3d(b.y_axis[0], b.y_axis[1], b.y_axis[2]).transpose();
    R.row(2) = Eigen::Vector3d(b.z_axis[0], b.z_axis[1], b.z_axis[2]).transpose();
    const Eigen::Vector3d C(b.center[0], b.center[1], b.center[2]);
    E.topLeftCorner<3, 3>() = R;
    E.topRightCorner<3, 1>() = -R * C;
    return E;
}

Projection compose_projection(const PoseParams& pose, int width, int height) {
    if (width <= 0 || height <= 0) throw UsageError("image size must be positive");
    const Eigen::Matrix4d K = intrinsics_matrix(pose.focal, pose.principal[0], pose.principal[1]);
    return Projection::from_matrix(K * extrinsics_matrix(pose));
}

} // namespace jof

#include "matfield/camera.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace matfield {

void validate_view(const CameraView& view) {
    if (!(view.fov_y_deg > 0.0 && view.fov_y_deg < 180.0))
        throw std::invalid_argument("camera: fov_y must lie in (0, 180) degrees");
    if (view.width <= 0 || view.height <= 0)
        throw std::invalid_argument("camera: resolution must be positive");
    const Eigen::Matrix3d r = view.world_to_camera.topLeftCorner<3, 3>();
    if (((r * r.transpose()) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw std::invalid_argument("camera: rotation block is not orthonormal");
}

Intrinsics intrinsics_from_fov(const CameraView& view) {
    const double half_fov = view.fov_y_deg * std::numbers::pi / 180.0 / 2.0;
    Intrinsics k;
    k.f_y = static_cast<double>(view.height) / (2.0 * std::tan(half_fov));
    k.f_x = k.f_y;  // square pixels
    k.c_x = static_cast<double>(view.width) / 2.0;
    k.c_y = static_cast<double>(view.height) / 2.0;
    return k;
}

Projection project(const CameraView& view, const Eigen::Vector3d& p) {
    const Eigen::Vector4d pc = view.world_to_camera * p.homogeneous();
    Projection out;
    out.depth = pc.z();
    out.in_front = pc.z() > 0.0;
    if (!out.in_front) return out;
    const Intrinsics k = intrinsics_from_fov(view);
    const double px = k.f_x * (pc.x() / pc.z()) + k.c_x;
    const double py = k.f_y * (pc.y() / pc.z()) + k.c_y;
    out.uv.x() = (px - k.c_x) / (static_cast<double>(view.width) / 2.0);
    out.uv.y() = (py - k.c_y) / (static_cast<double>(view.height) / 2.0);
    return out;
}

CameraView look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   double fov_y_deg, int width, int height) {
    Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d up(0.0, 1.0, 0.0);
    if (std::abs(forward.dot(up)) > 0.999) up = Eigen::Vector3d(1.0, 0.0, 0.0);
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right).normalized();

    // Rows of R map world axes onto (right, down, forward) camera axes.
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;

    CameraView view;
    view.world_to_camera.setIdentity();
    view.world_to_camera.topLeftCorner<3, 3>() = r;
    view.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    view.fov_y_deg = fov_y_deg;
    view.width = width;
    view.height = height;
    return view;
}

std::vector<CameraView> fibonacci_sphere_views(int n, double radius, double fov_y_deg,
                                               int width, int height) {
    if (n < 1) throw std::invalid_argument("fibonacci_sphere_views: n must be >= 1");
    std::vector<CameraView> views;
    views.reserve(static_cast<std::size_t>(n));
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double r_xy = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double phi = golden_angle * static_cast<double>(i);
        const Eigen::Vector3d eye(radius * r_xy * std::cos(phi), radius * y,
                                  radius * r_xy * std::sin(phi));
        views.push_back(look_at(eye, Eigen::Vector3d::Zero(), fov_y_deg, width, height));
    }
    return views;
}

}  // namespace matfield

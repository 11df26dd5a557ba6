#pragma once

#include <Eigen/Dense>
#include <vector>

namespace matfield {

// Pinhole camera: rigid world-to-camera transform plus a vertical FOV.
// Camera space looks down +z; depth is the camera-space z coordinate.
struct CameraView {
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
    double fov_y_deg = 40.0;
    int width = 512;
    int height = 512;
};

void validate_view(const CameraView& view);

struct Intrinsics {
    double f_x = 0.0, f_y = 0.0, c_x = 0.0, c_y = 0.0;
};

// f_y = H / (2 tan(fov_y/2)); square pixels give f_x = f_y; principal point
// at the image center.
Intrinsics intrinsics_from_fov(const CameraView& view);

struct Projection {
    Eigen::Vector2d uv = Eigen::Vector2d::Zero();  // image center (0,0), edges +-1
    bool in_front = false;
    double depth = 0.0;  // camera-space z
};

Projection project(const CameraView& view, const Eigen::Vector3d& p);

// Camera at `eye` looking at `target`.
CameraView look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   double fov_y_deg, int width, int height);

// n cameras on a Fibonacci sphere of the given radius, aimed at the origin.
std::vector<CameraView> fibonacci_sphere_views(int n, double radius, double fov_y_deg,
                                               int width, int height);

}  // namespace matfield

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "matfield/camera.hpp"

namespace matfield {

// Triangle vs axis-aligned box, both closed: touching counts as intersecting.
// Separating-axis test over 13 axes (3 box normals, triangle normal, 9 edge
// cross products).
bool triangle_box_intersect(const std::array<Eigen::Vector3d, 3>& tri,
                            const Eigen::Vector3d& box_min, const Eigen::Vector3d& box_max);

// Occupancy lattice over a padded AABB; pitch h = 1/r in object units.
struct VoxelGrid {
    int resolution = 0;  // cells per unit length
    Eigen::Vector3d b_min = Eigen::Vector3d::Zero();
    std::array<int, 3> dims{0, 0, 0};
    std::vector<std::uint8_t> surface;   // S
    std::vector<std::uint8_t> exterior;  // X
    std::vector<std::uint8_t> interior;  // Y = !X && !S

    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
    }
    double pitch() const { return 1.0 / static_cast<double>(resolution); }
    Eigen::Vector3d cell_center(int i, int j, int k) const {
        const double h = pitch();
        return b_min + Eigen::Vector3d((i + 0.5) * h, (j + 0.5) * h, (k + 0.5) * h);
    }
};

// Surface rasterization + exterior flood fill + interior extraction.
// Faces must be triangles; returns interior cell centers and the grid.
struct SolidResult {
    std::vector<Eigen::Vector3d> centers;
    VoxelGrid grid;
};

SolidResult voxelize_solid(const std::vector<Eigen::Vector3d>& vertices,
                           const std::vector<std::array<int, 3>>& triangles, int r);

struct SegmentedMesh {
    std::vector<Eigen::Vector3d> vertices;
    struct Segment {
        std::string id;
        std::vector<std::vector<int>> faces;  // polygons; fan-triangulated
    };
    std::vector<Segment> segments;
};

void validate_mesh(const SegmentedMesh& mesh);

// Voxel centers in (-0.5, 0.5)^3 with lattice indices on an r^3 grid aligned
// with [-0.5, 0.5]^3 and optional segment ids (-1 = none).
struct SolidVoxelization {
    int resolution = 0;
    std::vector<Eigen::Vector3d> centers;
    std::vector<std::array<int, 3>> indices;
    std::vector<int> segment_of;
    std::vector<std::string> segment_names;

    Eigen::Vector3d discretized_center(std::size_t i) const {
        const double r = static_cast<double>(resolution);
        return Eigen::Vector3d(indices[i][0] / r - 0.5, indices[i][1] / r - 0.5,
                               indices[i][2] / r - 0.5);
    }
};

std::array<int, 3> discretize_index(const Eigen::Vector3d& center, int r);

// Whole-mesh normalization to [-0.5, 0.5]^3, per-segment solid voxelization,
// optional per-segment and global subsampling.
SolidVoxelization voxelize_segmented(const SegmentedMesh& mesh, int r,
                                     std::optional<std::size_t> k_seg,
                                     std::optional<std::size_t> k_all, std::uint64_t seed);

struct GaussianSplat {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Vector4d quat = Eigen::Vector4d(1, 0, 0, 0);  // (w, x, y, z), unit
    Eigen::Vector3d scales = Eigen::Vector3d::Ones();
    double opacity = 1.0;
};

void validate_splat(const GaussianSplat& s);
Eigen::Matrix3d splat_rotation(const GaussianSplat& s);

// Maps means +- 3 * max scale into [-0.5, 0.5]^3 (uniform scale).
std::vector<GaussianSplat> normalize_splats(const std::vector<GaussianSplat>& splats);

// 99th-percentile iso-surface: cell occupied iff the Mahalanobis form at its
// center is <= chi-square(3, 0.99) for some splat.
inline constexpr double kChiSq3_99 = 11.3449;

struct OccupancyGrid {
    int resolution = 0;
    std::vector<std::uint8_t> occupied;

    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * resolution + j) * resolution + i;
    }
    double pitch() const { return 1.0 / static_cast<double>(resolution); }
    Eigen::Vector3d cell_center(int i, int j, int k) const {
        const double h = pitch();
        return Eigen::Vector3d(-0.5 + (i + 0.5) * h, -0.5 + (j + 0.5) * h,
                               -0.5 + (k + 0.5) * h);
    }
    std::size_t count() const;
};

OccupancyGrid splat_to_occupancy(const std::vector<GaussianSplat>& splats, int r);

// Depth-map carving: renders the occupancy per view by per-pixel ray
// traversal, then removes cells observed strictly in front of the stored
// surface (tolerance h/2). Interior cells behind the surface are kept.
SolidVoxelization carve_exterior(const OccupancyGrid& occ,
                                 const std::vector<CameraView>& views);

inline constexpr int kCarveImageSize = 256;

// Three-phase splat voxelizer: ellipsoid occupancy, then depth carving with
// n_views Fibonacci-sphere cameras (radius 2, FOV 40 degrees).
SolidVoxelization voxelize_splats(const std::vector<GaussianSplat>& splats, int r,
                                  int n_views);

}  // namespace matfield

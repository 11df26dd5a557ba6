#pragma once

#include <Eigen/Dense>
#include <vector>

#include "matfield/camera.hpp"
#include "matfield/voxelizer.hpp"

namespace matfield {

// n x n patch-token grid with c channels, stored (row, col, channel).
struct FeatureMap {
    int n = 0;
    int c = 0;
    std::vector<float> data;

    std::size_t offset(int row, int col) const {
        return (static_cast<std::size_t>(row) * n + col) * c;
    }
};

void validate_feature_map(const FeatureMap& map);

// Align-corners bilinear sample; uv outside [-1, 1]^2 clamps to the border.
Eigen::VectorXd bilinear_sample(const FeatureMap& map, const Eigen::Vector2d& uv);

// One c-vector per voxel; `seen` flags voxels in front of at least one view.
struct VoxelFeatures {
    int channels = 0;
    Eigen::MatrixXd values;  // c x L
    std::vector<std::uint8_t> seen;
};

// Mean of bilinear samples over the views a voxel is in front of; voxels
// visible from no view get the zero vector and seen = 0.
VoxelFeatures lift_features(const SolidVoxelization& vox,
                            const std::vector<std::pair<CameraView, FeatureMap>>& views);

}  // namespace matfield

#include "matfield/featlift.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace matfield {

void validate_feature_map(const FeatureMap& map) {
    if (map.n < 2) throw std::invalid_argument("feature map: n must be >= 2");
    if (map.c < 1) throw std::invalid_argument("feature map: c must be >= 1");
    if (map.data.size() != static_cast<std::size_t>(map.n) * map.n * map.c)
        throw std::invalid_argument("feature map: data size does not match n*n*c");
    for (float v : map.data)
        if (!std::isfinite(v)) throw std::invalid_argument("feature map: non-finite value");
}

Eigen::VectorXd bilinear_sample(const FeatureMap& map, const Eigen::Vector2d& uv) {
    const double u = std::clamp(uv.x(), -1.0, 1.0);
    const double v = std::clamp(uv.y(), -1.0, 1.0);
    // Align-corners: uv = -1 maps to lattice 0, uv = +1 to lattice n-1.
    const double gx = (u + 1.0) * 0.5 * static_cast<double>(map.n - 1);
    const double gy = (v + 1.0) * 0.5 * static_cast<double>(map.n - 1);
    const int x0 = std::clamp(static_cast<int>(std::floor(gx)), 0, map.n - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(gy)), 0, map.n - 1);
    const int x1 = std::min(x0 + 1, map.n - 1);
    const int y1 = std::min(y0 + 1, map.n - 1);
    const double fx = gx - static_cast<double>(x0);
    const double fy = gy - static_cast<double>(y0);

    const double w00 = (1.0 - fx) * (1.0 - fy);
    const double w10 = fx * (1.0 - fy);
    const double w01 = (1.0 - fx) * fy;
    const double w11 = fx * fy;

    Eigen::VectorXd out = Eigen::VectorXd::Zero(map.c);
    const std::size_t o00 = map.offset(y0, x0);
    const std::size_t o10 = map.offset(y0, x1);
    const std::size_t o01 = map.offset(y1, x0);
    const std::size_t o11 = map.offset(y1, x1);
    for (int ch = 0; ch < map.c; ++ch) {
        out(ch) = w00 * map.data[o00 + ch] + w10 * map.data[o10 + ch] +
                  w01 * map.data[o01 + ch] + w11 * map.data[o11 + ch];
    }
    return out;
}

VoxelFeatures lift_features(const SolidVoxelization& vox,
                            const std::vector<std::pair<CameraView, FeatureMap>>& views) {
    if (views.empty()) throw std::invalid_argument("lift_features: need at least one view");
    const int c = views.front().second.c;
    for (const auto& [view, map] : views) {
        validate_view(view);
        validate_feature_map(map);
        if (map.c != c)
            throw std::invalid_argument("lift_features: channel count mismatch across views");
    }

    // Reduce in a canonical view order so the result is exactly invariant
    // under permutations of the input list. Fully identical views compare
    // equal and are interchangeable in the sum.
    std::vector<std::size_t> order(views.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto view_key_less = [&](std::size_t a, std::size_t b) {
        const auto& [va, ma] = views[a];
        const auto& [vb, mb] = views[b];
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col) {
                if (va.world_to_camera(r, col) != vb.world_to_camera(r, col))
                    return va.world_to_camera(r, col) < vb.world_to_camera(r, col);
            }
        if (va.fov_y_deg != vb.fov_y_deg) return va.fov_y_deg < vb.fov_y_deg;
        if (va.width != vb.width) return va.width < vb.width;
        if (va.height != vb.height) return va.height < vb.height;
        if (ma.n != mb.n) return ma.n < mb.n;
        return std::lexicographical_compare(ma.data.begin(), ma.data.end(),
                                            mb.data.begin(), mb.data.end());
    };
    std::stable_sort(order.begin(), order.end(), view_key_less);

    const auto count = vox.centers.size();
    VoxelFeatures out;
    out.channels = c;
    out.values = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(count));
    out.seen.assign(count, 0);

    for (std::size_t i = 0; i < count; ++i) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(c);
        int hits = 0;
        for (std::size_t vi : order) {
            const auto& [view, map] = views[vi];
            const Projection pr = project(view, vox.centers[i]);
            if (!pr.in_front) continue;
            acc += bilinear_sample(map, pr.uv);
            ++hits;
        }
        if (hits > 0) {
            out.values.col(static_cast<Eigen::Index>(i)) = acc / static_cast<double>(hits);
            out.seen[i] = 1;
        }
    }
    return out;
}

}  // namespace matfield

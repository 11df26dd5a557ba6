#pragma once

// Test-only oracles, independent of the implementation paths they check.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "matfield/matvae.hpp"
#include "matfield/nn.hpp"

namespace oracles {

// |det| of the numerical Jacobian of a 2D map via central differences.
inline double numerical_jacobian_det(
    const std::function<Eigen::Vector2d(const Eigen::Vector2d&)>& map,
    const Eigen::Vector2d& u, double step = 1e-6) {
    Eigen::Matrix2d j;
    for (int c = 0; c < 2; ++c) {
        Eigen::Vector2d hi = u, lo = u;
        hi(c) += step;
        lo(c) -= step;
        const Eigen::Vector2d d = (map(hi) - map(lo)) / (2.0 * step);
        j.col(c) = d;
    }
    return std::abs(j.determinant());
}

// Central finite differences of a scalar function over a ParamSet; sweeps the
// listed flat indices (all when empty).
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
};

inline GradCheckResult finite_difference_check(
    matfield::nn::ParamSet& params, const matfield::nn::ParamSet& analytic,
    const std::function<double()>& eval, const std::vector<std::size_t>& indices,
    double step = 1e-5) {
    GradCheckResult result;
    std::vector<std::size_t> sweep = indices;
    if (sweep.empty()) {
        sweep.resize(params.scalar_count());
        for (std::size_t i = 0; i < sweep.size(); ++i) sweep[i] = i;
    }
    for (std::size_t flat : sweep) {
        const double original = params.get_scalar(flat);
        params.set_scalar(flat, original + step);
        const double hi = eval();
        params.set_scalar(flat, original - step);
        const double lo = eval();
        params.set_scalar(flat, original);
        const double fd = (hi - lo) / (2.0 * step);
        const double an = analytic.get_scalar(flat);
        const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
        const double rel = std::abs(fd - an) / scale;
        if (rel > result.max_rel_err) {
            result.max_rel_err = rel;
            result.worst_index = flat;
        }
    }
    return result;
}

// Generalized winding number of a point wrt a triangle soup (van Oosterom-
// Strackee solid angles). ~1 inside a watertight mesh, ~0 outside.
inline double winding_number(const std::vector<Eigen::Vector3d>& vertices,
                             const std::vector<std::array<int, 3>>& triangles,
                             const Eigen::Vector3d& p) {
    double total = 0.0;
    for (const auto& t : triangles) {
        const Eigen::Vector3d a = vertices[static_cast<std::size_t>(t[0])] - p;
        const Eigen::Vector3d b = vertices[static_cast<std::size_t>(t[1])] - p;
        const Eigen::Vector3d c = vertices[static_cast<std::size_t>(t[2])] - p;
        const double la = a.norm(), lb = b.norm(), lc = c.norm();
        const double num = a.dot(b.cross(c));
        const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        total += 2.0 * std::atan2(num, den);
    }
    return total / (4.0 * std::numbers::pi);
}

// Regularized lower incomplete gamma P(3/2, x/2) = chi-square(3) CDF, via the
// closed form F(x) = erf(sqrt(x/2)) - sqrt(2x/pi) exp(-x/2).
inline double chi2_3_cdf(double x) {
    if (x <= 0.0) return 0.0;
    return std::erf(std::sqrt(x / 2.0)) -
           std::sqrt(2.0 * x / std::numbers::pi) * std::exp(-x / 2.0);
}

inline double chi2_3_quantile(double p) {
    double lo = 0.0, hi = 100.0;
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (chi2_3_cdf(mid) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace oracles

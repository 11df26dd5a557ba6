#include "matfield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace matfield {

namespace {

double take_log(double v, LogBase base) {
    return base == LogBase::kNatural ? std::log(v) : std::log10(v);
}

ErrorStats stats_of_pairs(const std::vector<std::pair<double, double>>& pairs, LogBase base) {
    ErrorStats s;
    for (const auto& [y, yhat] : pairs) {
        if (!(y > 0.0) || !(yhat > 0.0))
            throw std::invalid_argument("pointwise_errors: log metrics need positive values");
        const double ly = take_log(y, base);
        const double lyhat = take_log(yhat, base);
        s.ade += std::abs(y - yhat);
        s.alde += std::abs(ly - lyhat);
        s.alre += std::abs(ly - lyhat) / std::abs(ly);
        s.are += std::abs(y - yhat) / y;
        s.mnre += std::min(y / yhat, yhat / y);
    }
    const double n = static_cast<double>(pairs.size());
    s.ade /= n;
    s.alde /= n;
    s.alre /= n;
    s.are /= n;
    s.mnre /= n;
    return s;
}

}  // namespace

ErrorStats pointwise_errors(const std::vector<std::vector<std::pair<double, double>>>& objects,
                            Aggregation aggregation, LogBase base) {
    if (objects.empty()) throw std::invalid_argument("pointwise_errors: no objects");
    for (const auto& obj : objects)
        if (obj.empty()) throw std::invalid_argument("pointwise_errors: empty object");

    if (aggregation == Aggregation::kGlobalVoxelMean) {
        std::vector<std::pair<double, double>> all;
        for (const auto& obj : objects) all.insert(all.end(), obj.begin(), obj.end());
        return stats_of_pairs(all, base);
    }

    ErrorStats acc;
    for (const auto& obj : objects) {
        const ErrorStats s = stats_of_pairs(obj, base);
        acc.ade += s.ade;
        acc.alde += s.alde;
        acc.alre += s.alre;
        acc.are += s.are;
        acc.mnre += s.mnre;
    }
    const double k = static_cast<double>(objects.size());
    acc.ade /= k;
    acc.alde /= k;
    acc.alre /= k;
    acc.are /= k;
    acc.mnre /= k;
    return acc;
}

DerivedModuli derived_moduli(const MaterialTriplet& t) {
    require_valid_triplet(t, "derived_moduli");
    if (!(t.nu < 0.5))
        throw std::invalid_argument("derived_moduli: bulk modulus singular at nu = 0.5");
    DerivedModuli m;
    m.shear_g = t.e / (2.0 * (1.0 + t.nu));
    m.bulk_k = t.e / (3.0 * (1.0 - 2.0 * t.nu));
    m.e_over_rho = t.e / t.rho;
    m.ashby_stiff = std::sqrt(t.e) / t.rho;
    m.ashby_energy = std::cbrt(t.e) / t.rho;
    return m;
}

double bray_curtis(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("bray_curtis: length mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < 0.0 || y[i] < 0.0)
            throw std::invalid_argument("bray_curtis: components must be non-negative");
        num += std::abs(x[i] - y[i]);
        den += x[i] + y[i];
    }
    if (den == 0.0) throw std::invalid_argument("bray_curtis: all-zero inputs");
    return num / den;
}

namespace {

// Empirical quantile with linear interpolation between order statistics.
double quantile(const std::vector<double>& sorted, double q) {
    const double n = static_cast<double>(sorted.size());
    double pos = q * n - 0.5;
    pos = std::clamp(pos, 0.0, n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double wasserstein_1d(std::vector<double> a, std::vector<double> b, int p) {
    if (a.empty() || b.empty())
        throw std::invalid_argument("wasserstein_1d: empty sample set");
    if (p != 1 && p != 2) throw std::invalid_argument("wasserstein_1d: order must be 1 or 2");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t m = std::max(a.size(), b.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double q = (static_cast<double>(k) + 0.5) / static_cast<double>(m);
        const double d = std::abs(quantile(a, q) - quantile(b, q));
        acc += (p == 1) ? d : d * d;
    }
    acc /= static_cast<double>(m);
    return (p == 1) ? acc : std::sqrt(acc);
}

double kl_histogram(const std::vector<double>& a, const std::vector<double>& b, int bins) {
    if (a.empty() || b.empty()) throw std::invalid_argument("kl_histogram: empty sample set");
    if (bins < 2) throw std::invalid_argument("kl_histogram: bins must be >= 2");

    double lo = a.front(), hi = a.front();
    for (double v : a) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : b) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) return 0.0;  // all mass in one bin for both

    auto histogram = [&](const std::vector<double>& xs) {
        std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
        for (double v : xs) {
            int bin = static_cast<int>((v - lo) / (hi - lo) * bins);
            bin = std::clamp(bin, 0, bins - 1);
            h[static_cast<std::size_t>(bin)] += 1.0;
        }
        const double n = static_cast<double>(xs.size());
        double total = 0.0;
        for (auto& v : h) {
            v = v / n + 1e-9;
            total += v;
        }
        for (auto& v : h) v /= total;
        return h;
    };

    const auto pa = histogram(a);
    const auto pb = histogram(b);
    double kl = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i] > 0.0) kl += pa[i] * std::log(pa[i] / pb[i]);
    return kl;
}

double mass_estimate(const std::vector<double>& densities, double volume_m3) {
    if (densities.empty()) throw std::invalid_argument("mass_estimate: no densities");
    if (!(volume_m3 > 0.0)) throw std::invalid_argument("mass_estimate: volume must be > 0");
    double mean = 0.0;
    for (double rho : densities) mean += rho;
    mean /= static_cast<double>(densities.size());
    return mean * volume_m3;
}

}  // namespace matfield

#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "matfield/mtd.hpp"

namespace matfield {

enum class Aggregation { kPerObjectMean, kGlobalVoxelMean };
enum class LogBase { kNatural, kBase10 };

// Per-property error suite: ADE, ALDE, ALRE, ARE, MnRE.
struct ErrorStats {
    double ade = 0.0;
    double alde = 0.0;
    double alre = 0.0;
    double are = 0.0;
    double mnre = 0.0;
};

// objects[k] holds (ground truth, prediction) pairs for one object. Log
// metrics use natural log by default and require positive values.
ErrorStats pointwise_errors(const std::vector<std::vector<std::pair<double, double>>>& objects,
                            Aggregation aggregation, LogBase base = LogBase::kNatural);

struct DerivedModuli {
    double shear_g = 0.0;        // E / (2 (1 + nu))
    double bulk_k = 0.0;         // E / (3 (1 - 2 nu))
    double e_over_rho = 0.0;     // specific modulus
    double ashby_stiff = 0.0;    // E^(1/2) / rho
    double ashby_energy = 0.0;   // E^(1/3) / rho
};

DerivedModuli derived_moduli(const MaterialTriplet& t);

// Sum |x - y| / Sum (x + y), in [0, 1] for non-negative inputs.
double bray_curtis(const std::vector<double>& x, const std::vector<double>& y);

// Empirical 1-D Wasserstein distance via sorted quantile coupling; p in {1, 2}.
double wasserstein_1d(std::vector<double> a, std::vector<double> b, int p);

// D_KL(hist(a) || hist(b)) over shared-support equal-width bins with additive
// smoothing of 1e-9 mass per bin.
double kl_histogram(const std::vector<double>& a, const std::vector<double>& b, int bins);
inline constexpr int kDefaultKlBins = 64;

// mean(rho) * volume.
double mass_estimate(const std::vector<double>& densities, double volume_m3);

}  // namespace matfield

#pragma once

#include <array>
#include <string>
#include <vector>

namespace matfield {

// One measured material point: Young's modulus [Pa], Poisson's ratio [-],
// density [kg/m^3]. E and rho strictly positive, nu in [0, 0.5).
struct MaterialTriplet {
    double e = 0.0;
    double nu = 0.0;
    double rho = 0.0;
};

bool triplet_is_valid(const MaterialTriplet& t);
void require_valid_triplet(const MaterialTriplet& t, const std::string& context);

// Measured range for one named material.
struct MaterialRange {
    std::string name;
    double e_lo = 0.0, e_hi = 0.0;
    double nu_lo = 0.0, nu_hi = 0.0;
    double rho_lo = 0.0, rho_hi = 0.0;

    bool contains(const MaterialTriplet& t) const;
    // log10-span of E and rho plus nu-span scaled by the physical 0.5 width.
    double size() const;
};

struct MaterialRangeDb {
    std::vector<MaterialRange> ranges;
};

void validate_range(const MaterialRange& r);
void validate_db(const MaterialRangeDb& db);

MaterialRangeDb load_ranges(const std::string& path);
MaterialRangeDb parse_ranges_json(const std::string& text);
std::string ranges_to_json(const MaterialRangeDb& db);

// Proportional-to-size allocation, at least one sample per range. E and rho
// drawn uniformly in log10 within their spans, nu uniformly in linear span.
std::vector<MaterialTriplet> sample_triplets(const MaterialRangeDb& db,
                                             std::size_t total,
                                             std::uint64_t seed);

// Collapses triplets equal after rounding each property to 6 significant
// digits; keeps first occurrences in order.
std::vector<MaterialTriplet> dedupe(const std::vector<MaterialTriplet>& triplets);

// Per-property min-max transform: E and rho in log10, nu raw.
struct Normalizer {
    double e_log10_min = 0.0, e_log10_max = 0.0;
    double nu_min = 0.0, nu_max = 0.0;
    double rho_log10_min = 0.0, rho_log10_max = 0.0;
};

Normalizer fit_normalizer(const std::vector<MaterialTriplet>& triplets);
std::array<double, 3> normalize(const MaterialTriplet& t, const Normalizer& n);
MaterialTriplet denormalize(const std::array<double, 3>& x, const Normalizer& n);

// Per-property relative errors against the nearest measured range; all zero
// iff the triplet lies inside at least one range.
struct ValidityError {
    double e_err = 0.0;
    double nu_err = 0.0;
    double rho_err = 0.0;

    bool is_zero() const { return e_err == 0.0 && nu_err == 0.0 && rho_err == 0.0; }
};

ValidityError validity_error(const MaterialTriplet& t, const MaterialRangeDb& db);

}  // namespace matfield

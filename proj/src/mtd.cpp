#include "matfield/mtd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "matfield/rng.hpp"
#include <json.hpp>

namespace matfield {

namespace {

constexpr double kNuPhysicalSpan = 0.5;

std::string round_key(const MaterialTriplet& t) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.6g|%.6g|%.6g", t.e, t.nu, t.rho);
    return buf;
}

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

bool triplet_is_valid(const MaterialTriplet& t) {
    return std::isfinite(t.e) && std::isfinite(t.nu) && std::isfinite(t.rho) &&
           t.e > 0.0 && t.rho > 0.0 && t.nu >= 0.0 && t.nu < 0.5;
}

void require_valid_triplet(const MaterialTriplet& t, const std::string& context) {
    if (!triplet_is_valid(t)) {
        std::ostringstream os;
        os << context << ": invalid material triplet (e=" << t.e << ", nu=" << t.nu
           << ", rho=" << t.rho << "); requires e>0, rho>0, 0<=nu<0.5";
        throw std::invalid_argument(os.str());
    }
}

bool MaterialRange::contains(const MaterialTriplet& t) const {
    return t.e >= e_lo && t.e <= e_hi && t.nu >= nu_lo && t.nu <= nu_hi &&
           t.rho >= rho_lo && t.rho <= rho_hi;
}

double MaterialRange::size() const {
    return (std::log10(e_hi) - std::log10(e_lo)) + (nu_hi - nu_lo) / kNuPhysicalSpan +
           (std::log10(rho_hi) - std::log10(rho_lo));
}

void validate_range(const MaterialRange& r) {
    auto fail = [&](const std::string& field, const std::string& why) {
        throw std::invalid_argument("range '" + r.name + "': " + field + " " + why);
    };
    if (r.name.empty()) throw std::invalid_argument("range with empty name");
    if (!(r.e_lo > 0.0)) fail("e_pa", "lower bound must be > 0");
    if (!(r.rho_lo > 0.0)) fail("rho_kgm3", "lower bound must be > 0");
    if (!(r.e_lo <= r.e_hi)) fail("e_pa", "has lo > hi");
    if (!(r.nu_lo <= r.nu_hi)) fail("nu", "has lo > hi");
    if (!(r.rho_lo <= r.rho_hi)) fail("rho_kgm3", "has lo > hi");
    if (!(r.nu_lo >= 0.0 && r.nu_hi < 0.5)) fail("nu", "must lie in [0, 0.5)");
    for (double v : {r.e_lo, r.e_hi, r.nu_lo, r.nu_hi, r.rho_lo, r.rho_hi})
        if (!std::isfinite(v)) fail("bounds", "must be finite");
}

void validate_db(const MaterialRangeDb& db) {
    if (db.ranges.empty()) throw std::invalid_argument("empty database");
    std::set<std::string> names;
    for (const auto& r : db.ranges) {
        validate_range(r);
        if (!names.insert(r.name).second)
            throw std::invalid_argument("duplicate range name '" + r.name + "'");
    }
}

MaterialRangeDb parse_ranges_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("range db parse failure: ") + e.what());
    }
    if (!j.is_array()) throw std::invalid_argument("range db must be a JSON array");
    MaterialRangeDb db;
    for (const auto& item : j) {
        MaterialRange r;
        try {
            r.name = item.at("name").get<std::string>();
            const auto& e = item.at("e_pa");
            const auto& nu = item.at("nu");
            const auto& rho = item.at("rho_kgm3");
            r.e_lo = e.at(0).get<double>();
            r.e_hi = e.at(1).get<double>();
            r.nu_lo = nu.at(0).get<double>();
            r.nu_hi = nu.at(1).get<double>();
            r.rho_lo = rho.at(0).get<double>();
            r.rho_hi = rho.at(1).get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(std::string("range db entry malformed: ") + e.what());
        }
        db.ranges.push_back(std::move(r));
    }
    validate_db(db);
    return db;
}

MaterialRangeDb load_ranges(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open range db '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_ranges_json(ss.str());
}

std::string ranges_to_json(const MaterialRangeDb& db) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : db.ranges) {
        j.push_back({{"name", r.name},
                     {"e_pa", {r.e_lo, r.e_hi}},
                     {"nu", {r.nu_lo, r.nu_hi}},
                     {"rho_kgm3", {r.rho_lo, r.rho_hi}}});
    }
    return j.dump(2);
}

std::vector<MaterialTriplet> sample_triplets(const MaterialRangeDb& db,
                                             std::size_t total,
                                             std::uint64_t seed) {
    validate_db(db);
    const std::size_t k = db.ranges.size();
    if (total < k)
        throw std::invalid_argument("sample_triplets: total < number of ranges");

    double size_sum = 0.0;
    std::vector<double> sizes(k);
    for (std::size_t i = 0; i < k; ++i) {
        sizes[i] = db.ranges[i].size();
        size_sum += sizes[i];
    }

    std::vector<std::size_t> counts(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double weight = (size_sum > 0.0) ? sizes[i] / size_sum : 1.0 / double(k);
        counts[i] = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(double(total) * weight)));
    }

    Rng rng(seed);
    std::vector<MaterialTriplet> out;
    for (std::size_t i = 0; i < k; ++i) {
        const auto& r = db.ranges[i];
        const double le_lo = std::log10(r.e_lo), le_hi = std::log10(r.e_hi);
        const double lr_lo = std::log10(r.rho_lo), lr_hi = std::log10(r.rho_hi);
        for (std::size_t s = 0; s < counts[i]; ++s) {
            MaterialTriplet t;
            t.e = std::pow(10.0, rng.uniform(le_lo, le_hi));
            t.nu = rng.uniform(r.nu_lo, r.nu_hi);
            t.rho = std::pow(10.0, rng.uniform(lr_lo, lr_hi));
            // Uniform draws stay in-span; pow/log round-trip can nudge a
            // boundary value by an ulp, so clamp back into the source range.
            t.e = clamp(t.e, r.e_lo, r.e_hi);
            t.nu = clamp(t.nu, r.nu_lo, r.nu_hi);
            t.rho = clamp(t.rho, r.rho_lo, r.rho_hi);
            out.push_back(t);
        }
    }
    return out;
}

std::vector<MaterialTriplet> dedupe(const std::vector<MaterialTriplet>& triplets) {
    std::set<std::string> seen;
    std::vector<MaterialTriplet> out;
    out.reserve(triplets.size());
    for (const auto& t : triplets)
        if (seen.insert(round_key(t)).second) out.push_back(t);
    return out;
}

Normalizer fit_normalizer(const std::vector<MaterialTriplet>& triplets) {
    if (triplets.size() < 2)
        throw std::invalid_argument("fit_normalizer: need at least 2 triplets");
    Normalizer n;
    n.e_log10_min = n.nu_min = n.rho_log10_min = std::numeric_limits<double>::infinity();
    n.e_log10_max = n.nu_max = n.rho_log10_max = -std::numeric_limits<double>::infinity();
    for (const auto& t : triplets) {
        require_valid_triplet(t, "fit_normalizer");
        const double le = std::log10(t.e), lr = std::log10(t.rho);
        n.e_log10_min = std::min(n.e_log10_min, le);
        n.e_log10_max = std::max(n.e_log10_max, le);
        n.nu_min = std::min(n.nu_min, t.nu);
        n.nu_max = std::max(n.nu_max, t.nu);
        n.rho_log10_min = std::min(n.rho_log10_min, lr);
        n.rho_log10_max = std::max(n.rho_log10_max, lr);
    }
    if (!(n.e_log10_min < n.e_log10_max))
        throw std::invalid_argument("fit_normalizer: zero spread in E");
    if (!(n.nu_min < n.nu_max))
        throw std::invalid_argument("fit_normalizer: zero spread in nu");
    if (!(n.rho_log10_min < n.rho_log10_max))
        throw std::invalid_argument("fit_normalizer: zero spread in rho");
    return n;
}

std::array<double, 3> normalize(const MaterialTriplet& t, const Normalizer& n) {
    return {(std::log10(t.e) - n.e_log10_min) / (n.e_log10_max - n.e_log10_min),
            (t.nu - n.nu_min) / (n.nu_max - n.nu_min),
            (std::log10(t.rho) - n.rho_log10_min) / (n.rho_log10_max - n.rho_log10_min)};
}

MaterialTriplet denormalize(const std::array<double, 3>& x, const Normalizer& n) {
    MaterialTriplet t;
    t.e = std::pow(10.0, n.e_log10_min + x[0] * (n.e_log10_max - n.e_log10_min));
    t.nu = n.nu_min + x[1] * (n.nu_max - n.nu_min);
    t.rho = std::pow(10.0, n.rho_log10_min + x[2] * (n.rho_log10_max - n.rho_log10_min));
    return t;
}

ValidityError validity_error(const MaterialTriplet& t, const MaterialRangeDb& db) {
    if (db.ranges.empty()) throw std::invalid_argument("validity_error: empty database");

    for (const auto& r : db.ranges)
        if (r.contains(t)) return {};

    const double le = std::log10(t.e);
    const double lr = std::log10(t.rho);

    // Nearest range by summed per-property clamp distance, E and rho in
    // log10 units, nu scaled by its physical 0.5 span. First minimum wins.
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < db.ranges.size(); ++i) {
        const auto& r = db.ranges[i];
        const double de = std::abs(le - clamp(le, std::log10(r.e_lo), std::log10(r.e_hi)));
        const double dn = std::abs(t.nu - clamp(t.nu, r.nu_lo, r.nu_hi)) / kNuPhysicalSpan;
        const double dr = std::abs(lr - clamp(lr, std::log10(r.rho_lo), std::log10(r.rho_hi)));
        const double d = de + dn + dr;
        if (d < best_dist) {
            best_dist = d;
            best = i;
        }
    }

    const auto& r = db.ranges[best];
    const double ce = clamp(le, std::log10(r.e_lo), std::log10(r.e_hi));
    const double cn = clamp(t.nu, r.nu_lo, r.nu_hi);
    const double cr = clamp(t.rho, r.rho_lo, r.rho_hi);

    ValidityError err;
    err.e_err = std::abs(le - ce) / std::max(std::abs(ce), 1e-12);
    err.nu_err = std::abs(t.nu - cn) / std::max(cn, 1e-6);
    err.rho_err = std::abs(t.rho - cr) / cr;
    return err;
}

}  // namespace matfield

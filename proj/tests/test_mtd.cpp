#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <set>

#include "matfield/mtd.hpp"
#include "matfield/rng.hpp"

using namespace matfield;

namespace {

MaterialRange make_range(const std::string& name, double e_lo, double e_hi, double nu_lo,
                         double nu_hi, double rho_lo, double rho_hi) {
    return MaterialRange{name, e_lo, e_hi, nu_lo, nu_hi, rho_lo, rho_hi};
}

MaterialRangeDb small_db() {
    MaterialRangeDb db;
    db.ranges.push_back(make_range("Foam", 1e5, 1e6, 0.1, 0.3, 20, 200));
    db.ranges.push_back(make_range("Steel", 2e11, 2e11, 0.31, 0.31, 7700, 7700));
    db.ranges.push_back(make_range("Wood", 8e9, 1.1e10, 0.3, 0.45, 600, 800));
    return db;
}

// Brute-force containment, the independent check for the validity invariant.
bool contained_anywhere(const MaterialTriplet& t, const MaterialRangeDb& db) {
    for (const auto& r : db.ranges)
        if (t.e >= r.e_lo && t.e <= r.e_hi && t.nu >= r.nu_lo && t.nu <= r.nu_hi &&
            t.rho >= r.rho_lo && t.rho <= r.rho_hi)
            return true;
    return false;
}

}  // namespace

TEST_CASE("load_ranges parses the documented JSON schema") {
    const char* text = R"([{"name":"Steel","e_pa":[2e11,2e11],"nu":[0.31,0.31],"rho_kgm3":[7700,7700]}])";
    const MaterialRangeDb db = parse_ranges_json(text);
    REQUIRE(db.ranges.size() == 1);
    CHECK(db.ranges[0].name == "Steel");
    CHECK(db.ranges[0].e_lo == 2e11);
    CHECK(db.ranges[0].rho_hi == 7700);
}

TEST_CASE("load_ranges rejects bad databases") {
    CHECK_THROWS_WITH_AS(parse_ranges_json("[]"), doctest::Contains("empty database"),
                         std::invalid_argument);
    const char* dup = R"([
      {"name":"A","e_pa":[1e9,2e9],"nu":[0.1,0.2],"rho_kgm3":[100,200]},
      {"name":"A","e_pa":[1e9,2e9],"nu":[0.1,0.2],"rho_kgm3":[100,200]}])";
    CHECK_THROWS_WITH_AS(parse_ranges_json(dup), doctest::Contains("duplicate"),
                         std::invalid_argument);
    const char* bad_nu = R"([{"name":"B","e_pa":[1e9,2e9],"nu":[0.1,0.6],"rho_kgm3":[100,200]}])";
    CHECK_THROWS_WITH_AS(parse_ranges_json(bad_nu), doctest::Contains("nu"),
                         std::invalid_argument);
    const char* flipped = R"([{"name":"C","e_pa":[2e9,1e9],"nu":[0.1,0.2],"rho_kgm3":[100,200]}])";
    CHECK_THROWS_WITH_AS(parse_ranges_json(flipped), doctest::Contains("lo > hi"),
                         std::invalid_argument);
    CHECK_THROWS_AS(parse_ranges_json("not json"), std::invalid_argument);
}

TEST_CASE("sample_triplets handles degenerate spans and proportional allocation") {
    SUBCASE("zero-width range yields identical points") {
        MaterialRangeDb db;
        db.ranges.push_back(make_range("Point", 2e11, 2e11, 0.31, 0.31, 7700, 7700));
        const auto out = sample_triplets(db, 3, 7);
        REQUIRE(out.size() == 3);
        for (const auto& t : out) {
            CHECK(t.e == 2e11);
            CHECK(t.nu == 0.31);
            CHECK(t.rho == 7700);
        }
    }

    SUBCASE("3:1 size weights split 400 samples 300/100") {
        // Sizes via log10 spans: A has 3 decades of E, B has 1; ranges are
        // disjoint in rho so membership is unambiguous.
        MaterialRangeDb db;
        db.ranges.push_back(make_range("A", 1e6, 1e9, 0.2, 0.2, 100, 100));
        db.ranges.push_back(make_range("B", 1e6, 1e7, 0.2, 0.2, 300, 300));
        const auto out = sample_triplets(db, 400, 9);
        std::size_t count_a = 0, count_b = 0;
        for (const auto& t : out) (t.rho == 100 ? count_a : count_b) += 1;
        CHECK(count_a == 300);
        CHECK(count_b == 100);
    }

    SUBCASE("sampling is deterministic and in-range") {
        const auto db = small_db();
        const auto a = sample_triplets(db, 50, 123);
        const auto b = sample_triplets(db, 50, 123);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].e == b[i].e);
            CHECK(a[i].nu == b[i].nu);
            CHECK(a[i].rho == b[i].rho);
        }
        for (const auto& t : a) CHECK(contained_anywhere(t, db));
    }

    SUBCASE("total below range count is an error") {
        CHECK_THROWS_AS(sample_triplets(small_db(), 2, 1), std::invalid_argument);
    }
}

TEST_CASE("dedupe collapses at 6 significant digits") {
    SUBCASE("exact duplicates") {
        const std::vector<MaterialTriplet> in = {{1e9, 0.3, 1000}, {1e9, 0.3, 1000}};
        CHECK(dedupe(in).size() == 1);
    }
    SUBCASE("near-duplicates equal after rounding") {
        const std::vector<MaterialTriplet> in = {{1.0000001e9, 0.3, 1000},
                                                 {1.0000002e9, 0.3, 1000}};
        const auto out = dedupe(in);
        REQUIRE(out.size() == 1);
        CHECK(out[0].e == 1.0000001e9);  // first occurrence survives
    }
    SUBCASE("disjoint triplets unchanged") {
        const std::vector<MaterialTriplet> in = {{1e9, 0.3, 1000}, {2e9, 0.3, 1000},
                                                 {1e9, 0.31, 1000}};
        CHECK(dedupe(in).size() == 3);
    }
}

TEST_CASE("fit_normalizer finds log10 bounds and rejects zero spread") {
    SUBCASE("E spanning 1e5..1e12 gives log bounds (5, 12)") {
        const std::vector<MaterialTriplet> ts = {{1e5, 0.2, 100}, {1e12, 0.4, 5000}};
        const Normalizer n = fit_normalizer(ts);
        CHECK(n.e_log10_min == doctest::Approx(5.0));
        CHECK(n.e_log10_max == doctest::Approx(12.0));
        CHECK(n.nu_min == doctest::Approx(0.2));
        CHECK(n.nu_max == doctest::Approx(0.4));
    }
    SUBCASE("identical triplets are a zero-spread error") {
        const std::vector<MaterialTriplet> ts = {{1e9, 0.3, 1000}, {1e9, 0.3, 1000}};
        CHECK_THROWS_WITH_AS(fit_normalizer(ts), doctest::Contains("zero spread"),
                             std::invalid_argument);
    }
    SUBCASE("fewer than two triplets is an error") {
        CHECK_THROWS_AS(fit_normalizer({{1e9, 0.3, 1000}}), std::invalid_argument);
    }
}

TEST_CASE("normalize maps fit bounds to the unit cube and inverts") {
    const std::vector<MaterialTriplet> ts = {{1e5, 0.2, 100}, {1e12, 0.4, 5000}};
    const Normalizer n = fit_normalizer(ts);

    const auto lo = normalize(ts[0], n);
    const auto hi = normalize(ts[1], n);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(lo[k]) <= 1e-12);
        CHECK(std::abs(hi[k] - 1.0) <= 1e-12);
    }

    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        MaterialTriplet t;
        t.e = std::pow(10.0, rng.uniform(5.0, 12.0));
        t.nu = rng.uniform(0.2, 0.4);
        t.rho = std::pow(10.0, rng.uniform(2.0, std::log10(5000.0)));
        const MaterialTriplet back = denormalize(normalize(t, n), n);
        CHECK(std::abs(back.e - t.e) / t.e <= 1e-12);
        CHECK(std::abs(back.nu - t.nu) <= 1e-12 * std::max(1.0, t.nu));
        CHECK(std::abs(back.rho - t.rho) / t.rho <= 1e-12);
    }

    SUBCASE("values outside the fit bounds map linearly outside [0,1]") {
        MaterialTriplet t{1e4, 0.1, 10};
        const auto x = normalize(t, n);
        CHECK(x[0] < 0.0);
        CHECK(x[1] < 0.0);
        CHECK(x[2] < 0.0);
    }
}

TEST_CASE("normalize is strictly monotone per property") {
    const std::vector<MaterialTriplet> ts = {{1e5, 0.2, 100}, {1e12, 0.4, 5000}};
    const Normalizer n = fit_normalizer(ts);
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const double e = std::pow(10.0, rng.uniform(5.0, 11.9));
        const double nu = rng.uniform(0.2, 0.39);
        const double rho = std::pow(10.0, rng.uniform(2.0, 3.6));
        const auto a = normalize({e, nu, rho}, n);
        const auto b = normalize({e * 1.01, nu + 0.001, rho * 1.01}, n);
        CHECK(b[0] > a[0]);
        CHECK(b[1] > a[1]);
        CHECK(b[2] > a[2]);
    }
}

TEST_CASE("validity_error is zero exactly on containment") {
    const auto db = small_db();

    SUBCASE("triplet inside the Steel point range") {
        CHECK(validity_error({2e11, 0.31, 7700}, db).is_zero());
    }

    SUBCASE("rho at twice the nearest range maximum gives rho_err = 1") {
        // Inside Wood for E and nu, rho = 2 x rho_hi.
        const MaterialTriplet t{1e10, 0.35, 1600};
        const ValidityError err = validity_error(t, db);
        CHECK(err.e_err == 0.0);
        CHECK(err.nu_err == 0.0);
        CHECK(err.rho_err == doctest::Approx(1.0));
    }

    SUBCASE("below every minimum gives three positive errors") {
        MaterialRangeDb db1;
        db1.ranges.push_back(make_range("Only", 1e9, 2e9, 0.2, 0.3, 500, 600));
        const ValidityError err = validity_error({1e6, 0.1, 50}, db1);
        CHECK(err.e_err > 0.0);
        CHECK(err.nu_err > 0.0);
        CHECK(err.rho_err > 0.0);
    }

    SUBCASE("property: zero iff contained (brute-force oracle)") {
        Rng rng(99);
        for (int trial = 0; trial < 2000; ++trial) {
            MaterialTriplet t;
            t.e = std::pow(10.0, rng.uniform(4.0, 12.5));
            t.nu = rng.uniform(0.0, 0.49);
            t.rho = std::pow(10.0, rng.uniform(1.0, 4.2));
            CHECK(validity_error(t, db).is_zero() == contained_anywhere(t, db));
        }
    }
}

TEST_CASE("sampled and deduped triplets validate against their source db") {
    const auto db = small_db();
    const auto samples = dedupe(sample_triplets(db, 300, 5));
    for (const auto& t : samples) CHECK(validity_error(t, db).is_zero());
}

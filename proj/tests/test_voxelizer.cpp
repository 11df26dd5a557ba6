#include <doctest.h>

#include <stdexcept>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <set>

#include "matfield/rng.hpp"
#include "matfield/voxelizer.hpp"
#include "oracles.hpp"
#include "test_meshes.hpp"

using namespace matfield;
using Eigen::Vector3d;
using test_meshes::TriMesh;

namespace {

// Conservative sampling oracle: barycentric point samples inside the box
// imply intersection (one-sided check).
bool sampling_says_intersect(const std::array<Vector3d, 3>& tri, const Vector3d& lo,
                             const Vector3d& hi, int per_edge = 32) {
    for (int a = 0; a <= per_edge; ++a)
        for (int b = 0; b <= per_edge - a; ++b) {
            const double u = static_cast<double>(a) / per_edge;
            const double v = static_cast<double>(b) / per_edge;
            const Vector3d p = tri[0] + u * (tri[1] - tri[0]) + v * (tri[2] - tri[0]);
            if ((p.array() >= lo.array()).all() && (p.array() <= hi.array()).all())
                return true;
        }
    return false;
}

// Interior-center set from the winding-number oracle, on the same grid.
std::set<std::array<int, 3>> winding_interior(const TriMesh& mesh, const VoxelGrid& grid) {
    std::set<std::array<int, 3>> cells;
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                if (grid.surface[grid.index(i, j, k)]) continue;
                const double w = oracles::winding_number(mesh.vertices, mesh.triangles,
                                                         grid.cell_center(i, j, k));
                if (std::abs(w) > 0.5) cells.insert({i, j, k});
            }
    return cells;
}

std::set<std::array<int, 3>> solid_interior(const VoxelGrid& grid) {
    std::set<std::array<int, 3>> cells;
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i)
                if (grid.interior[grid.index(i, j, k)]) cells.insert({i, j, k});
    return cells;
}

}  // namespace

TEST_CASE("triangle-box basics") {
    const Vector3d lo(-1, -1, -1), hi(1, 1, 1);
    SUBCASE("triangle fully inside") {
        CHECK(triangle_box_intersect({Vector3d(0, 0, 0), Vector3d(0.5, 0, 0),
                                      Vector3d(0, 0.5, 0)},
                                     lo, hi));
    }
    SUBCASE("coplanar triangle outside a face") {
        CHECK_FALSE(triangle_box_intersect({Vector3d(-3, -3, 1.5), Vector3d(3, -3, 1.5),
                                            Vector3d(0, 3, 1.5)},
                                           lo, hi));
    }
    SUBCASE("touching face counts as intersecting (closed sets)") {
        CHECK(triangle_box_intersect({Vector3d(-0.5, -0.5, 1.0), Vector3d(0.5, -0.5, 1.0),
                                      Vector3d(0, 0.5, 1.0)},
                                     lo, hi));
    }
    SUBCASE("large triangle slicing through") {
        CHECK(triangle_box_intersect({Vector3d(-5, -5, 0), Vector3d(5, -5, 0),
                                      Vector3d(0, 5, 0)},
                                     lo, hi));
    }
    SUBCASE("degenerate box rejected") {
        CHECK_THROWS_AS(triangle_box_intersect({Vector3d(0, 0, 0), Vector3d(1, 0, 0),
                                                Vector3d(0, 1, 0)},
                                               Vector3d(0, 0, 0), Vector3d(1, 1, 0)),
                        std::invalid_argument);
    }
}

TEST_CASE("triangle-box SAT agrees with a dense sampling oracle") {
    Rng rng(101);
    int positives = 0;
    for (int trial = 0; trial < 100000; ++trial) {
        std::array<Vector3d, 3> tri;
        for (auto& v : tri)
            v = Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
        const Vector3d center(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        const Vector3d half(rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1));
        const Vector3d lo = center - half, hi = center + half;
        const bool sat = triangle_box_intersect(tri, lo, hi);
        if (sat) ++positives;
        // One-sided: a sampled point inside the box proves intersection.
        if (!sat) CHECK_FALSE(sampling_says_intersect(tri, lo, hi, 12));
    }
    CHECK(positives > 1000);  // the draw covers both outcomes
}

TEST_CASE("voxelize_solid equals the winding-number oracle on watertight meshes") {
    const int r = 16;
    const std::array<TriMesh, 4> meshes = {
        test_meshes::cube(0.25), test_meshes::icosphere(0.25, 2),
        test_meshes::torus(0.3, 0.12, 32, 16), test_meshes::l_bracket()};
    for (const auto& mesh : meshes) {
        const SolidResult res = voxelize_solid(mesh.vertices, mesh.triangles, r);
        CHECK(solid_interior(res.grid) == winding_interior(mesh, res.grid));
    }
}

TEST_CASE("icosphere volume estimate lands within 10% of analytic") {
    const TriMesh sphere = test_meshes::icosphere(0.25, 3);
    const SolidResult res = voxelize_solid(sphere.vertices, sphere.triangles, 32);
    double surf = 0.0;
    for (auto v : res.grid.surface) surf += v;
    const double h = res.grid.pitch();
    const double volume = (static_cast<double>(res.centers.size()) + surf / 2.0) * h * h * h;
    const double analytic = 4.0 / 3.0 * std::numbers::pi * std::pow(0.25, 3);
    CHECK(std::abs(volume - analytic) / analytic < 0.10);
}

TEST_CASE("open sheet yields surface but no interior") {
    // Two triangles forming a flat quad; flood fill reaches both sides.
    const std::vector<Vector3d> verts = {{-0.3, -0.3, 0.0},
                                         {0.3, -0.3, 0.0},
                                         {0.3, 0.3, 0.0},
                                         {-0.3, 0.3, 0.0}};
    const std::vector<std::array<int, 3>> tris = {{0, 1, 2}, {0, 2, 3}};
    const SolidResult res = voxelize_solid(verts, tris, 16);
    CHECK(res.centers.empty());
    double surf = 0.0;
    for (auto v : res.grid.surface) surf += v;
    CHECK(surf > 0);
}

TEST_CASE("voxelize_solid validates inputs") {
    CHECK_THROWS_WITH_AS(voxelize_solid({{0, 0, 0}}, {}, 8), doctest::Contains("empty"),
                         std::invalid_argument);
}

TEST_CASE("grid partition invariants: Y, S, X disjoint and consistent") {
    const TriMesh mesh = test_meshes::torus(0.3, 0.12, 24, 12);
    const SolidResult res = voxelize_solid(mesh.vertices, mesh.triangles, 20);
    const auto& g = res.grid;
    for (std::size_t i = 0; i < g.surface.size(); ++i) {
        CHECK((g.interior[i] & g.exterior[i]) == 0);
        CHECK((g.interior[i] & g.surface[i]) == 0);
        CHECK((g.exterior[i] & g.surface[i]) == 0);
        CHECK((g.interior[i] | g.exterior[i] | g.surface[i]) == 1);
    }
}

TEST_CASE("discretization is idempotent and centers stay inside the cube") {
    Rng rng(111);
    for (int r : {8, 16, 33, 64}) {
        for (int trial = 0; trial < 2000; ++trial) {
            const Vector3d c(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                             rng.uniform(-0.5, 0.5));
            const auto idx = discretize_index(c, r);
            for (int a = 0; a < 3; ++a) {
                CHECK(idx[static_cast<std::size_t>(a)] >= 0);
                CHECK(idx[static_cast<std::size_t>(a)] < r);
            }
            SolidVoxelization v;
            v.resolution = r;
            v.indices.push_back(idx);
            const Vector3d chat = v.discretized_center(0);
            CHECK(discretize_index(chat, r) == idx);
        }
    }
}

TEST_CASE("voxelize_segmented matches voxelize_solid for one segment") {
    // Cube spanning [-0.25, 0.25]: normalization rescales it to the full
    // [-0.5, 0.5] cube.
    const TriMesh cube = test_meshes::cube(0.25);
    SegmentedMesh mesh;
    mesh.vertices = cube.vertices;
    SegmentedMesh::Segment seg;
    seg.id = "cube";
    for (const auto& t : cube.triangles) seg.faces.push_back({t[0], t[1], t[2]});
    mesh.segments.push_back(seg);

    const SolidVoxelization vox = voxelize_segmented(mesh, 16, std::nullopt, std::nullopt, 1);
    // Reference: normalized cube (vertices clipped to +-(0.5 - 1e-6)).
    std::vector<Vector3d> norm_verts;
    for (const auto& v : cube.vertices) {
        Vector3d n = v * 2.0;
        norm_verts.push_back(n.cwiseMax(-0.5 + 1e-6).cwiseMin(0.5 - 1e-6));
    }
    const SolidResult ref = voxelize_solid(norm_verts, cube.triangles, 16);
    REQUIRE(vox.centers.size() == ref.centers.size());
    std::set<std::array<int, 3>> got, want;
    for (std::size_t i = 0; i < vox.centers.size(); ++i) {
        got.insert(discretize_index(vox.centers[i], 16));
        want.insert(discretize_index(ref.centers[i], 16));
    }
    CHECK(got == want);
    for (int s : vox.segment_of) CHECK(s == 0);
    CHECK(vox.segment_names == std::vector<std::string>{"cube"});
}

TEST_CASE("per-segment cap keeps exactly k centers, deterministic per seed") {
    const TriMesh cube = test_meshes::cube(0.4);
    SegmentedMesh mesh;
    mesh.vertices = cube.vertices;
    SegmentedMesh::Segment seg;
    seg.id = "solid";
    for (const auto& t : cube.triangles) seg.faces.push_back({t[0], t[1], t[2]});
    mesh.segments.push_back(seg);

    const auto all = voxelize_segmented(mesh, 16, std::nullopt, std::nullopt, 2);
    REQUIRE(all.centers.size() > 10);
    const auto capped = voxelize_segmented(mesh, 16, 10, std::nullopt, 2);
    CHECK(capped.centers.size() == 10);
    const auto capped2 = voxelize_segmented(mesh, 16, 10, std::nullopt, 2);
    for (std::size_t i = 0; i < capped.centers.size(); ++i)
        CHECK(capped.centers[i] == capped2.centers[i]);

    // All capped centers come from the full solid set.
    std::set<std::array<int, 3>> full;
    for (const auto& c : all.centers) full.insert(discretize_index(c, 16));
    for (const auto& c : capped.centers) CHECK(full.count(discretize_index(c, 16)) == 1);

    const auto global_capped = voxelize_segmented(mesh, 16, std::nullopt, 7, 2);
    CHECK(global_capped.centers.size() == 7);
}

TEST_CASE("two-cube segments keep their ids straight") {
    const TriMesh pair = test_meshes::two_cubes();
    SegmentedMesh mesh;
    mesh.vertices = pair.vertices;
    SegmentedMesh::Segment left{"left", {}}, right{"right", {}};
    for (std::size_t i = 0; i < pair.triangles.size(); ++i) {
        const auto& t = pair.triangles[i];
        auto& seg = (i < 12) ? left : right;
        seg.faces.push_back({t[0], t[1], t[2]});
    }
    mesh.segments.push_back(left);
    mesh.segments.push_back(right);

    const SolidVoxelization vox = voxelize_segmented(mesh, 32, std::nullopt, std::nullopt, 3);
    REQUIRE(!vox.centers.empty());
    for (std::size_t i = 0; i < vox.centers.size(); ++i) {
        const bool is_left = vox.centers[i].x() < 0.0;
        const std::string& name =
            vox.segment_names[static_cast<std::size_t>(vox.segment_of[i])];
        CHECK(name == (is_left ? "left" : "right"));
    }
}

TEST_CASE("degenerate zero-extent mesh reports zero scale") {
    SegmentedMesh mesh;
    mesh.vertices = {{0.1, 0.1, 0.1}, {0.1, 0.1, 0.1}, {0.1, 0.1, 0.1}};
    mesh.segments.push_back({"p", {{0, 1, 2}}});
    CHECK_THROWS_WITH_AS(voxelize_segmented(mesh, 8, std::nullopt, std::nullopt, 0),
                         doctest::Contains("zero scale"), std::invalid_argument);
}

TEST_CASE("chi-square(3) 0.99 quantile matches the inverse-CDF oracle") {
    CHECK(oracles::chi2_3_quantile(0.99) == doctest::Approx(kChiSq3_99).epsilon(1e-4));
}

TEST_CASE("single isotropic splat fills a ball of radius sqrt(chi2) * s") {
    GaussianSplat s;
    s.mean = Vector3d::Zero();
    s.scales = Vector3d::Constant(0.08);
    const int r = 64;
    const OccupancyGrid occ = splat_to_occupancy({s}, r);
    const double h = occ.pitch();
    const double volume = static_cast<double>(occ.count()) * h * h * h;
    const double radius = std::sqrt(kChiSq3_99) * 0.08;
    const double analytic = 4.0 / 3.0 * std::numbers::pi * std::pow(radius, 3);
    CHECK(std::abs(volume - analytic) / analytic < 0.10);
    CHECK(std::sqrt(kChiSq3_99) == doctest::Approx(3.3682).epsilon(1e-4));
}

TEST_CASE("splat occupancy preconditions and component structure") {
    SUBCASE("no splats is an error") {
        CHECK_THROWS_AS(splat_to_occupancy({}, 16), std::invalid_argument);
    }
    SUBCASE("tiny scale is a covariance error") {
        GaussianSplat s;
        s.scales = Vector3d::Constant(1e-10);
        CHECK_THROWS_WITH_AS(splat_to_occupancy({s}, 16), doctest::Contains("1e-9"),
                             std::invalid_argument);
    }
    SUBCASE("two far splats give two 6-connected components") {
        GaussianSplat a, b;
        a.mean = Vector3d(-0.3, 0, 0);
        b.mean = Vector3d(0.3, 0, 0);
        a.scales = b.scales = Vector3d::Constant(0.02);
        const OccupancyGrid occ = splat_to_occupancy({a, b}, 32);
        // Flood-count components over occupied cells.
        std::vector<std::uint8_t> seen(occ.occupied.size(), 0);
        int components = 0;
        const int r = occ.resolution;
        for (int k = 0; k < r; ++k)
            for (int j = 0; j < r; ++j)
                for (int i = 0; i < r; ++i) {
                    const std::size_t start = occ.index(i, j, k);
                    if (!occ.occupied[start] || seen[start]) continue;
                    ++components;
                    std::vector<std::array<int, 3>> stack{{i, j, k}};
                    seen[start] = 1;
                    while (!stack.empty()) {
                        const auto u = stack.back();
                        stack.pop_back();
                        const std::array<std::array<int, 3>, 6> nbr{
                            {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1},
                             {0, 0, -1}}};
                        for (const auto& d : nbr) {
                            const int ii = u[0] + d[0], jj = u[1] + d[1], kk = u[2] + d[2];
                            if (ii < 0 || jj < 0 || kk < 0 || ii >= r || jj >= r || kk >= r)
                                continue;
                            const std::size_t idx = occ.index(ii, jj, kk);
                            if (occ.occupied[idx] && !seen[idx]) {
                                seen[idx] = 1;
                                stack.push_back({ii, jj, kk});
                            }
                        }
                    }
                }
        CHECK(components == 2);
    }
}

TEST_CASE("splat occupancy is monotone in the threshold radius") {
    // Larger scales strictly contain smaller-scale occupancy.
    GaussianSplat small, large;
    small.scales = Vector3d::Constant(0.05);
    large.scales = Vector3d::Constant(0.08);
    const OccupancyGrid a = splat_to_occupancy({small}, 32);
    const OccupancyGrid b = splat_to_occupancy({large}, 32);
    for (std::size_t i = 0; i < a.occupied.size(); ++i)
        if (a.occupied[i]) CHECK(b.occupied[i]);
}

TEST_CASE("splat occupancy is invariant under a shared rigid rotation") {
    // Rotate two anisotropic splats by a common rotation; occupancy of the
    // rotated set at rotated query cells matches the original.
    const double angle = std::numbers::pi / 2.0;  // exact 90-degree lattice map
    GaussianSplat a;
    a.mean = Vector3d(0.1, 0.05, -0.1);
    a.scales = Vector3d(0.1, 0.05, 0.02);
    GaussianSplat b;
    b.mean = Vector3d(-0.15, 0.0, 0.1);
    b.scales = Vector3d(0.03, 0.09, 0.05);

    auto rot_quat = [&](const GaussianSplat& s) {
        // Rotation about +z by angle, composed with the identity orientation.
        GaussianSplat out = s;
        const double half = angle / 2.0;
        const Eigen::Vector4d q(std::cos(half), 0.0, 0.0, std::sin(half));
        // Quaternion product q * s.quat with s.quat = identity.
        out.quat = q;
        out.mean = Vector3d(-s.mean.y(), s.mean.x(), s.mean.z());
        return out;
    };

    const OccupancyGrid orig = splat_to_occupancy({a, b}, 32);
    const OccupancyGrid rot = splat_to_occupancy({rot_quat(a), rot_quat(b)}, 32);
    // Cell (i, j, k) maps to (r-1-j, i, k) under the 90-degree turn.
    const int r = 32;
    for (int k = 0; k < r; ++k)
        for (int j = 0; j < r; ++j)
            for (int i = 0; i < r; ++i)
                CHECK(orig.occupied[orig.index(i, j, k)] ==
                      rot.occupied[rot.index(r - 1 - j, i, k)]);
}

TEST_CASE("carving a convex ball removes no interior cell") {
    GaussianSplat s;
    s.scales = Vector3d::Constant(0.07);
    const OccupancyGrid occ = splat_to_occupancy({s}, 48);
    const auto views = fibonacci_sphere_views(64, 2.0, 40.0, 256, 256);
    const SolidVoxelization carved = carve_exterior(occ, views);
    CHECK(carved.centers.size() == occ.count());
}

TEST_CASE("zero views is the identity on occupancy") {
    GaussianSplat s;
    s.scales = Vector3d::Constant(0.05);
    const OccupancyGrid occ = splat_to_occupancy({s}, 24);
    const SolidVoxelization out = carve_exterior(occ, {});
    CHECK(out.centers.size() == occ.count());
}

TEST_CASE("a floating cell in observed empty space is carved") {
    // Hand-built occupancy: a thick wall near x = +0.3 and one isolated cell
    // at x ~ -0.2 on the camera axis. A single-pixel camera looks down +x;
    // its only ray passes beside the floating cell (offset in y) and hits
    // the wall, so the floating cell sits strictly in front of the stored
    // surface and must be carved.
    const int r = 16;
    OccupancyGrid occ;
    occ.resolution = r;
    occ.occupied.assign(static_cast<std::size_t>(r) * r * r, 0);
    for (int k = 0; k < r; ++k)
        for (int j = 0; j < r; ++j)
            for (int i = 12; i <= 13; ++i) occ.occupied[occ.index(i, j, k)] = 1;
    const int fi = 4, fj = 9, fk = 8;
    occ.occupied[occ.index(fi, fj, fk)] = 1;

    const Vector3d floating = occ.cell_center(fi, fj, fk);
    // Camera on the -x axis at the floating cell's (y, z) height minus a few
    // cells in y, looking straight along +x.
    const Vector3d eye(-2.0, 0.0, floating.z());
    const CameraView view = look_at(eye, Vector3d(2.0, 0.0, floating.z()), 30.0, 1, 1);

    const std::size_t before = occ.count();
    const SolidVoxelization carved = carve_exterior(occ, {view});
    CHECK(carved.centers.size() == before - 1);
    for (const auto& c : carved.centers) CHECK((c - floating).norm() > 1e-9);
}

TEST_CASE("voxelize_splats: single splat survives carving and is deterministic") {
    GaussianSplat s;
    s.mean = Vector3d(0.2, -0.1, 0.05);
    s.scales = Vector3d::Constant(0.9);
    const SolidVoxelization a = voxelize_splats({s}, 32, 16);
    const SolidVoxelization b = voxelize_splats({s}, 32, 16);
    REQUIRE(!a.centers.empty());
    REQUIRE(a.centers.size() == b.centers.size());
    for (std::size_t i = 0; i < a.centers.size(); ++i) CHECK(a.centers[i] == b.centers[i]);

    // Convex single splat: carving removes nothing relative to occupancy.
    const OccupancyGrid occ = splat_to_occupancy(normalize_splats({s}), 32);
    CHECK(a.centers.size() == occ.count());
}

TEST_CASE("hollow shell of splats keeps its enclosed interior") {
    // Splats on a sphere of radius 0.35 with scale fat enough to close the
    // shell; the middle stays unseen and must survive carving.
    std::vector<GaussianSplat> shell;
    const int n = 128;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / n;
        const double rxy = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double phi = golden * i;
        GaussianSplat s;
        s.mean = 0.35 * Vector3d(rxy * std::cos(phi), y, rxy * std::sin(phi));
        s.scales = Vector3d::Constant(0.05);
        shell.push_back(s);
    }
    const auto norm = normalize_splats(shell);
    const OccupancyGrid occ = splat_to_occupancy(norm, 48);

    // The grid center cell is empty space enclosed by the shell.
    const int mid = 24;
    REQUIRE(occ.occupied[occ.index(mid, mid, mid)] == 0);

    OccupancyGrid with_core = occ;
    with_core.occupied[with_core.index(mid, mid, mid)] = 1;
    const auto views = fibonacci_sphere_views(64, 2.0, 40.0, 256, 256);
    const SolidVoxelization carved = carve_exterior(with_core, views);
    bool core_survives = false;
    for (const auto& c : carved.centers)
        if ((c - with_core.cell_center(mid, mid, mid)).norm() < 1e-12) core_survives = true;
    CHECK(core_survives);
}

TEST_CASE("splat csv validation") {
    GaussianSplat s;
    s.quat = Eigen::Vector4d(1.0, 0.1, 0.0, 0.0);  // not unit
    CHECK_THROWS_AS(validate_splat(s), std::invalid_argument);
}

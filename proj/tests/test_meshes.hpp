#pragma once

// Watertight test meshes built programmatically.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <vector>

namespace test_meshes {

struct TriMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<int, 3>> triangles;
};

// Axis-aligned box [lo, hi], 12 triangles, outward orientation.
inline TriMesh box(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    TriMesh m;
    m.vertices = {
        {lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), lo.z()},
        {lo.x(), hi.y(), lo.z()}, {lo.x(), lo.y(), hi.z()}, {hi.x(), lo.y(), hi.z()},
        {hi.x(), hi.y(), hi.z()}, {lo.x(), hi.y(), hi.z()}};
    m.triangles = {{0, 2, 1}, {0, 3, 2},   // z = lo
                   {4, 5, 6}, {4, 6, 7},   // z = hi
                   {0, 1, 5}, {0, 5, 4},   // y = lo
                   {3, 6, 2}, {3, 7, 6},   // y = hi
                   {0, 4, 7}, {0, 7, 3},   // x = lo
                   {1, 2, 6}, {1, 6, 5}};  // x = hi
    return m;
}

inline TriMesh cube(double half_extent) {
    return box(Eigen::Vector3d::Constant(-half_extent),
               Eigen::Vector3d::Constant(half_extent));
}

// Icosphere with the given subdivision level.
inline TriMesh icosphere(double radius, int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    TriMesh m;
    m.vertices = {{-1, t, 0}, {1, t, 0},   {-1, -t, 0}, {1, -t, 0},
                  {0, -1, t}, {0, 1, t},   {0, -1, -t}, {0, 1, -t},
                  {t, 0, -1}, {t, 0, 1},   {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : m.vertices) v = v.normalized() * radius;
    m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                   {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                   {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                   {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const Eigen::Vector3d v =
                (m.vertices[static_cast<std::size_t>(a)] +
                 m.vertices[static_cast<std::size_t>(b)]).normalized() * radius;
            m.vertices.push_back(v);
            const int idx = static_cast<int>(m.vertices.size()) - 1;
            midpoint[key] = idx;
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(m.triangles.size() * 4);
        for (const auto& tri : m.triangles) {
            const int ab = mid(tri[0], tri[1]);
            const int bc = mid(tri[1], tri[2]);
            const int ca = mid(tri[2], tri[0]);
            next.push_back({tri[0], ab, ca});
            next.push_back({tri[1], bc, ab});
            next.push_back({tri[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        m.triangles = std::move(next);
    }
    return m;
}

// Torus around the z axis: major radius R, tube radius r.
inline TriMesh torus(double major, double minor, int seg_major = 48, int seg_minor = 24) {
    TriMesh m;
    for (int i = 0; i < seg_major; ++i) {
        const double a = 2.0 * std::numbers::pi * i / seg_major;
        for (int j = 0; j < seg_minor; ++j) {
            const double b = 2.0 * std::numbers::pi * j / seg_minor;
            const double cx = (major + minor * std::cos(b)) * std::cos(a);
            const double cy = (major + minor * std::cos(b)) * std::sin(a);
            const double cz = minor * std::sin(b);
            m.vertices.emplace_back(cx, cy, cz);
        }
    }
    auto vid = [&](int i, int j) {
        return ((i % seg_major + seg_major) % seg_major) * seg_minor +
               ((j % seg_minor + seg_minor) % seg_minor);
    };
    for (int i = 0; i < seg_major; ++i)
        for (int j = 0; j < seg_minor; ++j) {
            const int a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1),
                      d = vid(i, j + 1);
            m.triangles.push_back({a, b, c});
            m.triangles.push_back({a, c, d});
        }
    return m;
}

// L-shaped prism: an L hexagon in xy extruded along z. Watertight.
inline TriMesh l_bracket() {
    // L outline (counterclockwise): big 0.5 x 0.5 square minus top-right
    // 0.25 x 0.25 corner.
    const std::array<Eigen::Vector2d, 6> outline = {
        Eigen::Vector2d(-0.25, -0.25), Eigen::Vector2d(0.25, -0.25),
        Eigen::Vector2d(0.25, 0.0),    Eigen::Vector2d(0.0, 0.0),
        Eigen::Vector2d(0.0, 0.25),    Eigen::Vector2d(-0.25, 0.25)};
    const double z0 = -0.15, z1 = 0.15;
    TriMesh m;
    for (const auto& p : outline) m.vertices.emplace_back(p.x(), p.y(), z0);
    for (const auto& p : outline) m.vertices.emplace_back(p.x(), p.y(), z1);

    // Caps: the L splits into two rectangles (0,1,2,3) x (0,3,4,5).
    const std::array<std::array<int, 3>, 4> cap = {
        std::array<int, 3>{0, 1, 2}, std::array<int, 3>{0, 2, 3},
        std::array<int, 3>{0, 3, 4}, std::array<int, 3>{0, 4, 5}};
    for (const auto& t : cap) m.triangles.push_back({t[0], t[2], t[1]});           // bottom
    for (const auto& t : cap) m.triangles.push_back({t[0] + 6, t[1] + 6, t[2] + 6});  // top

    for (int i = 0; i < 6; ++i) {
        const int j = (i + 1) % 6;
        m.triangles.push_back({i, j, j + 6});
        m.triangles.push_back({i, j + 6, i + 6});
    }
    return m;
}

// Two disjoint cubes, for segment-aware voxelization tests.
inline TriMesh two_cubes() {
    TriMesh a = box(Eigen::Vector3d(-0.45, -0.15, -0.15), Eigen::Vector3d(-0.15, 0.15, 0.15));
    TriMesh b = box(Eigen::Vector3d(0.15, -0.15, -0.15), Eigen::Vector3d(0.45, 0.15, 0.15));
    const int offset = static_cast<int>(a.vertices.size());
    for (const auto& v : b.vertices) a.vertices.push_back(v);
    for (auto t : b.triangles)
        a.triangles.push_back({t[0] + offset, t[1] + offset, t[2] + offset});
    return a;
}

}  // namespace test_meshes

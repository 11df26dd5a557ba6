#include "matfield/voxelizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>
#include <stdexcept>

#include "matfield/rng.hpp"

namespace matfield {

namespace {

constexpr double kClipEps = 1e-6;

// Projection interval of the triangle onto axis vs box "radius" around its
// center; strict inequality keeps touching configurations intersecting.
bool separated_on_axis(const Eigen::Vector3d& axis,
                       const std::array<Eigen::Vector3d, 3>& tri,
                       const Eigen::Vector3d& half) {
    const double p0 = axis.dot(tri[0]);
    const double p1 = axis.dot(tri[1]);
    const double p2 = axis.dot(tri[2]);
    const double tmin = std::min({p0, p1, p2});
    const double tmax = std::max({p0, p1, p2});
    const double rb = half.x() * std::abs(axis.x()) + half.y() * std::abs(axis.y()) +
                      half.z() * std::abs(axis.z());
    return tmin > rb || tmax < -rb;
}

}  // namespace

bool triangle_box_intersect(const std::array<Eigen::Vector3d, 3>& tri,
                            const Eigen::Vector3d& box_min, const Eigen::Vector3d& box_max) {
    const Eigen::Vector3d center = 0.5 * (box_min + box_max);
    const Eigen::Vector3d half = 0.5 * (box_max - box_min);
    if (!(half.minCoeff() > 0.0))
        throw std::invalid_argument("triangle_box_intersect: degenerate box");

    const std::array<Eigen::Vector3d, 3> t{tri[0] - center, tri[1] - center,
                                           tri[2] - center};

    static const std::array<Eigen::Vector3d, 3> axes{Eigen::Vector3d::UnitX(),
                                                     Eigen::Vector3d::UnitY(),
                                                     Eigen::Vector3d::UnitZ()};
    for (const auto& a : axes)
        if (separated_on_axis(a, t, half)) return false;

    const Eigen::Vector3d e0 = t[1] - t[0];
    const Eigen::Vector3d e1 = t[2] - t[1];
    const Eigen::Vector3d e2 = t[0] - t[2];
    if (separated_on_axis(e0.cross(e1), t, half)) return false;  // triangle normal

    for (const auto& e : {e0, e1, e2})
        for (const auto& a : axes)
            if (separated_on_axis(e.cross(a), t, half)) return false;
    return true;
}

SolidResult voxelize_solid(const std::vector<Eigen::Vector3d>& vertices,
                           const std::vector<std::array<int, 3>>& triangles, int r) {
    if (triangles.empty()) throw std::invalid_argument("voxelize_solid: empty face list");
    if (r < 1) throw std::invalid_argument("voxelize_solid: resolution must be >= 1");
    for (const auto& v : vertices)
        if (!v.allFinite()) throw std::invalid_argument("voxelize_solid: non-finite vertex");

    const double h = 1.0 / static_cast<double>(r);
    Eigen::Vector3d a_min = vertices.front(), a_max = vertices.front();
    for (const auto& v : vertices) {
        a_min = a_min.cwiseMin(v);
        a_max = a_max.cwiseMax(v);
    }

    VoxelGrid g;
    g.resolution = r;
    g.b_min = a_min - Eigen::Vector3d::Constant(h);
    const Eigen::Vector3d b_max = a_max + Eigen::Vector3d::Constant(h);
    for (int a = 0; a < 3; ++a)
        g.dims[static_cast<std::size_t>(a)] = std::max(
            1, static_cast<int>(std::ceil((b_max(a) - g.b_min(a)) / h - 1e-9)));

    const std::size_t ncells = static_cast<std::size_t>(g.dims[0]) * g.dims[1] * g.dims[2];
    g.surface.assign(ncells, 0);
    g.exterior.assign(ncells, 0);
    g.interior.assign(ncells, 0);

    // Surface rasterization.
    for (const auto& f : triangles) {
        std::array<Eigen::Vector3d, 3> tri;
        for (int c = 0; c < 3; ++c) {
            const int vi = f[static_cast<std::size_t>(c)];
            if (vi < 0 || vi >= static_cast<int>(vertices.size()))
                throw std::invalid_argument("voxelize_solid: face index out of range");
            tri[static_cast<std::size_t>(c)] = vertices[static_cast<std::size_t>(vi)];
        }
        Eigen::Vector3d t_min = tri[0].cwiseMin(tri[1]).cwiseMin(tri[2]);
        Eigen::Vector3d t_max = tri[0].cwiseMax(tri[1]).cwiseMax(tri[2]);
        std::array<int, 3> lo, hi;
        for (int a = 0; a < 3; ++a) {
            lo[static_cast<std::size_t>(a)] = std::clamp(
                static_cast<int>(std::floor((t_min(a) - g.b_min(a)) / h)), 0,
                g.dims[static_cast<std::size_t>(a)] - 1);
            hi[static_cast<std::size_t>(a)] = std::clamp(
                static_cast<int>(std::floor((t_max(a) - g.b_min(a)) / h)), 0,
                g.dims[static_cast<std::size_t>(a)] - 1);
        }
        for (int k = lo[2]; k <= hi[2]; ++k)
            for (int j = lo[1]; j <= hi[1]; ++j)
                for (int i = lo[0]; i <= hi[0]; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    if (g.surface[idx]) continue;
                    const Eigen::Vector3d cell_min =
                        g.b_min + Eigen::Vector3d(i * h, j * h, k * h);
                    const Eigen::Vector3d cell_max =
                        cell_min + Eigen::Vector3d::Constant(h);
                    if (triangle_box_intersect(tri, cell_min, cell_max)) g.surface[idx] = 1;
                }
    }

    // Exterior flood fill from boundary non-surface cells, 6-connectivity.
    std::deque<std::array<int, 3>> queue;
    auto try_seed = [&](int i, int j, int k) {
        const std::size_t idx = g.index(i, j, k);
        if (!g.surface[idx] && !g.exterior[idx]) {
            g.exterior[idx] = 1;
            queue.push_back({i, j, k});
        }
    };
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                if (i == 0 || j == 0 || k == 0 || i == g.dims[0] - 1 ||
                    j == g.dims[1] - 1 || k == g.dims[2] - 1)
                    try_seed(i, j, k);

    static const std::array<std::array<int, 3>, 6> nbr{
        {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
    while (!queue.empty()) {
        const auto u = queue.front();
        queue.pop_front();
        for (const auto& d : nbr) {
            const int i = u[0] + d[0], j = u[1] + d[1], k = u[2] + d[2];
            if (i < 0 || j < 0 || k < 0 || i >= g.dims[0] || j >= g.dims[1] ||
                k >= g.dims[2])
                continue;
            const std::size_t idx = g.index(i, j, k);
            if (!g.surface[idx] && !g.exterior[idx]) {
                g.exterior[idx] = 1;
                queue.push_back({i, j, k});
            }
        }
    }

    SolidResult out;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                if (!g.exterior[idx] && !g.surface[idx]) {
                    g.interior[idx] = 1;
                    out.centers.push_back(g.cell_center(i, j, k));
                }
            }
    out.grid = std::move(g);
    return out;
}

void validate_mesh(const SegmentedMesh& mesh) {
    if (mesh.vertices.empty() || mesh.segments.empty())
        throw std::invalid_argument("mesh is empty");
    std::set<std::string> ids;
    for (const auto& seg : mesh.segments) {
        if (!ids.insert(seg.id).second)
            throw std::invalid_argument("duplicate segment id '" + seg.id + "'");
        for (const auto& face : seg.faces) {
            if (face.size() < 3)
                throw std::invalid_argument("face with fewer than 3 vertices in segment '" +
                                            seg.id + "'");
            std::set<int> uniq(face.begin(), face.end());
            if (uniq.size() < 3)
                throw std::invalid_argument("face with repeated vertices in segment '" +
                                            seg.id + "'");
            for (int vi : face)
                if (vi < 0 || vi >= static_cast<int>(mesh.vertices.size()))
                    throw std::invalid_argument("face index out of range in segment '" +
                                                seg.id + "'");
        }
    }
}

std::array<int, 3> discretize_index(const Eigen::Vector3d& center, int r) {
    std::array<int, 3> out;
    for (int a = 0; a < 3; ++a) {
        const double t = (center(a) + 0.5) * static_cast<double>(r);
        const double snapped = std::round(t);
        // A value that is mathematically an exact lattice coordinate may sit
        // an ulp below it; treat near-integer t as exact before flooring.
        const int j = (std::abs(t - snapped) <= 1e-9 * std::max(1.0, std::abs(t)))
                          ? static_cast<int>(snapped)
                          : static_cast<int>(std::floor(t));
        out[static_cast<std::size_t>(a)] = std::clamp(j, 0, r - 1);
    }
    return out;
}

SolidVoxelization voxelize_segmented(const SegmentedMesh& mesh, int r,
                                     std::optional<std::size_t> k_seg,
                                     std::optional<std::size_t> k_all, std::uint64_t seed) {
    validate_mesh(mesh);

    Eigen::Vector3d v_min = mesh.vertices.front(), v_max = mesh.vertices.front();
    for (const auto& v : mesh.vertices) {
        v_min = v_min.cwiseMin(v);
        v_max = v_max.cwiseMax(v);
    }
    const Eigen::Vector3d c = 0.5 * (v_min + v_max);
    const double s = (v_max - v_min).maxCoeff();
    if (!(s > 0.0)) throw std::invalid_argument("voxelize_segmented: zero scale");

    std::vector<Eigen::Vector3d> norm(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        Eigen::Vector3d v = (mesh.vertices[i] - c) / s;
        norm[i] = v.cwiseMax(-0.5 + kClipEps).cwiseMin(0.5 - kClipEps);
    }

    Rng rng(seed);
    SolidVoxelization out;
    out.resolution = r;

    for (const auto& seg : mesh.segments) {
        // Gather the segment's vertices so its grid spans only its own AABB.
        std::vector<Eigen::Vector3d> seg_verts;
        std::vector<std::array<int, 3>> seg_tris;
        std::vector<int> remap(mesh.vertices.size(), -1);
        auto local = [&](int vi) {
            if (remap[static_cast<std::size_t>(vi)] < 0) {
                remap[static_cast<std::size_t>(vi)] = static_cast<int>(seg_verts.size());
                seg_verts.push_back(norm[static_cast<std::size_t>(vi)]);
            }
            return remap[static_cast<std::size_t>(vi)];
        };
        for (const auto& face : seg.faces)
            for (std::size_t k = 1; k + 1 < face.size(); ++k)
                seg_tris.push_back({local(face[0]), local(face[k]), local(face[k + 1])});
        if (seg_tris.empty()) continue;

        SolidResult solid = voxelize_solid(seg_verts, seg_tris, r);
        std::vector<Eigen::Vector3d> centers = std::move(solid.centers);
        if (k_seg && centers.size() > *k_seg) {
            const auto pick = rng.sample_without_replacement(centers.size(), *k_seg);
            std::vector<Eigen::Vector3d> kept;
            kept.reserve(pick.size());
            for (std::size_t p : pick) kept.push_back(centers[p]);
            centers = std::move(kept);
        }
        if (centers.empty()) continue;

        const int sid = static_cast<int>(out.segment_names.size());
        out.segment_names.push_back(seg.id);
        for (const auto& center : centers) {
            out.centers.push_back(center);
            out.segment_of.push_back(sid);
        }
    }

    if (k_all && out.centers.size() > *k_all) {
        const auto pick = rng.sample_without_replacement(out.centers.size(), *k_all);
        std::vector<Eigen::Vector3d> centers;
        std::vector<int> seg_of;
        centers.reserve(pick.size());
        seg_of.reserve(pick.size());
        for (std::size_t p : pick) {
            centers.push_back(out.centers[p]);
            seg_of.push_back(out.segment_of[p]);
        }
        out.centers = std::move(centers);
        out.segment_of = std::move(seg_of);
    }

    out.indices.reserve(out.centers.size());
    for (const auto& center : out.centers) out.indices.push_back(discretize_index(center, r));
    return out;
}

void validate_splat(const GaussianSplat& s) {
    if (std::abs(s.quat.norm() - 1.0) > 1e-6)
        throw std::invalid_argument("splat quaternion is not unit length");
    if (!(s.scales.minCoeff() > 0.0))
        throw std::invalid_argument("splat scales must be positive");
    if (!s.mean.allFinite() || !s.scales.allFinite())
        throw std::invalid_argument("splat has non-finite fields");
}

Eigen::Matrix3d splat_rotation(const GaussianSplat& s) {
    const double w = s.quat(0), x = s.quat(1), y = s.quat(2), z = s.quat(3);
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

std::vector<GaussianSplat> normalize_splats(const std::vector<GaussianSplat>& splats) {
    if (splats.empty()) throw std::invalid_argument("normalize_splats: no splats");
    double max_scale = 0.0;
    Eigen::Vector3d lo = splats.front().mean, hi = splats.front().mean;
    for (const auto& s : splats) {
        validate_splat(s);
        lo = lo.cwiseMin(s.mean);
        hi = hi.cwiseMax(s.mean);
        max_scale = std::max(max_scale, s.scales.maxCoeff());
    }
    lo -= Eigen::Vector3d::Constant(3.0 * max_scale);
    hi += Eigen::Vector3d::Constant(3.0 * max_scale);
    const Eigen::Vector3d center = 0.5 * (lo + hi);
    const double extent = (hi - lo).maxCoeff();
    if (!(extent > 0.0)) throw std::invalid_argument("normalize_splats: zero extent");

    std::vector<GaussianSplat> out = splats;
    for (auto& s : out) {
        s.mean = (s.mean - center) / extent;
        s.scales /= extent;
    }
    return out;
}

std::size_t OccupancyGrid::count() const {
    std::size_t n = 0;
    for (auto v : occupied) n += v;
    return n;
}

OccupancyGrid splat_to_occupancy(const std::vector<GaussianSplat>& splats, int r) {
    if (splats.empty()) throw std::invalid_argument("splat_to_occupancy: no splats");
    if (r < 1) throw std::invalid_argument("splat_to_occupancy: resolution must be >= 1");

    OccupancyGrid g;
    g.resolution = r;
    g.occupied.assign(static_cast<std::size_t>(r) * r * r, 0);
    const double h = g.pitch();
    const double radius_factor = std::sqrt(kChiSq3_99);

    for (const auto& s : splats) {
        if (s.scales.minCoeff() < 1e-9)
            throw std::invalid_argument("splat_to_occupancy: scale below 1e-9, "
                                        "covariance not invertible");
        const Eigen::Matrix3d rot_t = splat_rotation(s).transpose();
        const Eigen::Vector3d inv_s = s.scales.cwiseInverse();
        const double reach = radius_factor * s.scales.maxCoeff();

        std::array<int, 3> lo, hi;
        for (int a = 0; a < 3; ++a) {
            lo[static_cast<std::size_t>(a)] = std::clamp(
                static_cast<int>(std::floor((s.mean(a) - reach + 0.5) / h - 0.5)), 0, r - 1);
            hi[static_cast<std::size_t>(a)] = std::clamp(
                static_cast<int>(std::ceil((s.mean(a) + reach + 0.5) / h - 0.5)), 0, r - 1);
        }
        for (int k = lo[2]; k <= hi[2]; ++k)
            for (int j = lo[1]; j <= hi[1]; ++j)
                for (int i = lo[0]; i <= hi[0]; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    if (g.occupied[idx]) continue;
                    const Eigen::Vector3d u = g.cell_center(i, j, k) - s.mean;
                    const Eigen::Vector3d w = inv_s.cwiseProduct(rot_t * u);
                    if (w.squaredNorm() <= kChiSq3_99) g.occupied[idx] = 1;
                }
    }
    return g;
}

namespace {

// First occupied cell along the pixel ray (3D DDA); returns camera-space
// depth of that cell's center, or nullopt on a miss.
std::optional<double> raycast_depth(const OccupancyGrid& g, const CameraView& view,
                                    const Eigen::Vector3d& origin,
                                    const Eigen::Vector3d& dir) {
    const int r = g.resolution;
    const double h = g.pitch();

    // Slab intersection with [-0.5, 0.5]^3.
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir(a)) < 1e-15) {
            if (origin(a) < -0.5 || origin(a) > 0.5) return std::nullopt;
            continue;
        }
        double ta = (-0.5 - origin(a)) / dir(a);
        double tb = (0.5 - origin(a)) / dir(a);
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t0 > t1) return std::nullopt;

    const Eigen::Vector3d entry = origin + (t0 + 1e-12) * dir;
    std::array<int, 3> cell;
    for (int a = 0; a < 3; ++a)
        cell[static_cast<std::size_t>(a)] =
            std::clamp(static_cast<int>(std::floor((entry(a) + 0.5) / h)), 0, r - 1);

    std::array<int, 3> step;
    std::array<double, 3> t_max, t_delta;
    for (int a = 0; a < 3; ++a) {
        if (dir(a) > 0) {
            step[static_cast<std::size_t>(a)] = 1;
            const double bound = -0.5 + (cell[static_cast<std::size_t>(a)] + 1) * h;
            t_max[static_cast<std::size_t>(a)] = (bound - origin(a)) / dir(a);
            t_delta[static_cast<std::size_t>(a)] = h / dir(a);
        } else if (dir(a) < 0) {
            step[static_cast<std::size_t>(a)] = -1;
            const double bound = -0.5 + cell[static_cast<std::size_t>(a)] * h;
            t_max[static_cast<std::size_t>(a)] = (bound - origin(a)) / dir(a);
            t_delta[static_cast<std::size_t>(a)] = -h / dir(a);
        } else {
            step[static_cast<std::size_t>(a)] = 0;
            t_max[static_cast<std::size_t>(a)] = std::numeric_limits<double>::infinity();
            t_delta[static_cast<std::size_t>(a)] = std::numeric_limits<double>::infinity();
        }
    }

    while (true) {
        if (g.occupied[g.index(cell[0], cell[1], cell[2])]) {
            const Eigen::Vector3d center = g.cell_center(cell[0], cell[1], cell[2]);
            const Eigen::Vector4d pc = view.world_to_camera * center.homogeneous();
            return pc.z();
        }
        int axis = 0;
        if (t_max[1] < t_max[axis]) axis = 1;
        if (t_max[2] < t_max[axis]) axis = 2;
        cell[static_cast<std::size_t>(axis)] += step[static_cast<std::size_t>(axis)];
        if (cell[static_cast<std::size_t>(axis)] < 0 ||
            cell[static_cast<std::size_t>(axis)] >= r)
            return std::nullopt;
        t_max[static_cast<std::size_t>(axis)] += t_delta[static_cast<std::size_t>(axis)];
    }
}

SolidVoxelization occupancy_to_voxelization(const OccupancyGrid& g,
                                            const std::vector<std::uint8_t>& keep) {
    SolidVoxelization out;
    out.resolution = g.resolution;
    for (int k = 0; k < g.resolution; ++k)
        for (int j = 0; j < g.resolution; ++j)
            for (int i = 0; i < g.resolution; ++i) {
                const std::size_t idx = g.index(i, j, k);
                if (!g.occupied[idx] || !keep[idx]) continue;
                out.centers.push_back(g.cell_center(i, j, k));
                out.indices.push_back({i, j, k});
                out.segment_of.push_back(-1);
            }
    return out;
}

}  // namespace

SolidVoxelization carve_exterior(const OccupancyGrid& occ,
                                 const std::vector<CameraView>& views) {
    std::vector<std::uint8_t> keep(occ.occupied.size(), 1);
    if (views.empty()) return occupancy_to_voxelization(occ, keep);

    const double h = occ.pitch();
    for (const auto& view : views) {
        validate_view(view);
        const Intrinsics k = intrinsics_from_fov(view);
        const Eigen::Matrix3d rot = view.world_to_camera.topLeftCorner<3, 3>();
        const Eigen::Vector3d trans = view.world_to_camera.topRightCorner<3, 1>();
        const Eigen::Vector3d origin = -rot.transpose() * trans;

        // Depth map via per-pixel ray traversal.
        std::vector<double> depth(static_cast<std::size_t>(view.width) * view.height,
                                  std::numeric_limits<double>::quiet_NaN());
        for (int py = 0; py < view.height; ++py) {
            for (int px = 0; px < view.width; ++px) {
                const Eigen::Vector3d dir_cam((px + 0.5 - k.c_x) / k.f_x,
                                              (py + 0.5 - k.c_y) / k.f_y, 1.0);
                const Eigen::Vector3d dir = (rot.transpose() * dir_cam).normalized();
                const auto d = raycast_depth(occ, view, origin, dir);
                if (d)
                    depth[static_cast<std::size_t>(py) * view.width + px] = *d;
            }
        }

        // Carve cells observed strictly in front of the stored surface.
        for (int kk = 0; kk < occ.resolution; ++kk)
            for (int jj = 0; jj < occ.resolution; ++jj)
                for (int ii = 0; ii < occ.resolution; ++ii) {
                    const std::size_t idx = occ.index(ii, jj, kk);
                    if (!occ.occupied[idx] || !keep[idx]) continue;
                    const Eigen::Vector3d center = occ.cell_center(ii, jj, kk);
                    const Eigen::Vector4d pc = view.world_to_camera * center.homogeneous();
                    if (!(pc.z() > 0.0)) continue;
                    const int px = static_cast<int>(
                        std::floor(k.f_x * (pc.x() / pc.z()) + k.c_x));
                    const int py = static_cast<int>(
                        std::floor(k.f_y * (pc.y() / pc.z()) + k.c_y));
                    if (px < 0 || py < 0 || px >= view.width || py >= view.height) continue;
                    const double surf =
                        depth[static_cast<std::size_t>(py) * view.width + px];
                    if (std::isnan(surf)) continue;  // no observed surface, keep
                    if (pc.z() < surf - h / 2.0) keep[idx] = 0;
                }
    }
    return occupancy_to_voxelization(occ, keep);
}

SolidVoxelization voxelize_splats(const std::vector<GaussianSplat>& splats, int r,
                                  int n_views) {
    if (n_views < 1) throw std::invalid_argument("voxelize_splats: n_views must be >= 1");
    const auto normalized = normalize_splats(splats);
    const OccupancyGrid occ = splat_to_occupancy(normalized, r);
    const auto views =
        fibonacci_sphere_views(n_views, 2.0, 40.0, kCarveImageSize, kCarveImageSize);
    return carve_exterior(occ, views);
}

}  // namespace matfield

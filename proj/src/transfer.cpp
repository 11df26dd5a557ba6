#include "matfield/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace matfield {

void validate_field(const MaterialField& field) {
    if (field.vox.centers.empty())
        throw std::invalid_argument("material field is empty");
    if (field.materials.size() != field.vox.centers.size() ||
        field.vox.indices.size() != field.vox.centers.size())
        throw std::invalid_argument("material field has misaligned lengths");
    for (const auto& t : field.materials) require_valid_triplet(t, "material field");
}

std::vector<MaterialTriplet> nearest_material(const MaterialField& field,
                                              const std::vector<Eigen::Vector3d>& queries) {
    validate_field(field);
    const int r = field.vox.resolution;
    const double h = 1.0 / static_cast<double>(r);

    // Bucket voxels by their lattice cell; shell search widens until no
    // closer-or-tied candidate can remain outside.
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
    auto key = [&](int i, int j, int k) {
        return (static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(r) +
                static_cast<std::uint64_t>(j)) *
                   static_cast<std::uint64_t>(r) +
               static_cast<std::uint64_t>(k);
    };
    for (std::size_t v = 0; v < field.vox.centers.size(); ++v) {
        const auto& idx = field.vox.indices[v];
        buckets[key(idx[0], idx[1], idx[2])].push_back(v);
    }

    std::vector<MaterialTriplet> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        const std::array<int, 3> qc = discretize_index(q, r);
        double best_d2 = std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        bool found = false;

        auto consider = [&](std::size_t v) {
            const double d2 = (field.vox.centers[v] - q).squaredNorm();
            if (!found || d2 < best_d2 || (d2 == best_d2 && v < best_idx)) {
                best_d2 = d2;
                best_idx = v;
                found = true;
            }
        };
        auto scan_cell = [&](int i, int j, int k) {
            if (i < 0 || j < 0 || k < 0 || i >= r || j >= r || k >= r) return;
            const auto it = buckets.find(key(i, j, k));
            if (it == buckets.end()) return;
            for (std::size_t v : it->second) consider(v);
        };

        // Shell bounds assume the query sits in its lattice cell; distant
        // queries fall back to a full scan.
        if (q.cwiseAbs().maxCoeff() > 0.5 + h) {
            for (std::size_t v = 0; v < field.vox.centers.size(); ++v) consider(v);
            out.push_back(field.materials[best_idx]);
            continue;
        }

        for (int shell = 0;; ++shell) {
            // All candidates in shells >= `shell` are at least (shell-1)*h away.
            if (found) {
                const double lower = (static_cast<double>(shell) - 1.0) * h;
                if (lower > 0.0 && lower * lower > best_d2) break;
            }
            if (shell > 2 * r + 2) break;
            if (shell == 0) {
                scan_cell(qc[0], qc[1], qc[2]);
                continue;
            }
            const int s = shell;
            for (int dj = -s; dj <= s; ++dj)
                for (int dk = -s; dk <= s; ++dk) {
                    scan_cell(qc[0] - s, qc[1] + dj, qc[2] + dk);
                    scan_cell(qc[0] + s, qc[1] + dj, qc[2] + dk);
                }
            for (int di = -s + 1; di <= s - 1; ++di)
                for (int dk = -s; dk <= s; ++dk) {
                    scan_cell(qc[0] + di, qc[1] - s, qc[2] + dk);
                    scan_cell(qc[0] + di, qc[1] + s, qc[2] + dk);
                }
            for (int di = -s + 1; di <= s - 1; ++di)
                for (int dj = -s + 1; dj <= s - 1; ++dj) {
                    scan_cell(qc[0] + di, qc[1] + dj, qc[2] - s);
                    scan_cell(qc[0] + di, qc[1] + dj, qc[2] + s);
                }
        }
        out.push_back(field.materials[best_idx]);
    }
    return out;
}

namespace {

// Single-linkage merge of one property across all voxels.
void merge_property(std::vector<double>& values, double tol) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] < values[b];
        return a < b;
    });

    std::size_t cluster_start = 0;
    auto apply_cluster = [&](std::size_t begin, std::size_t end) {
        std::size_t rep = order[begin];
        for (std::size_t k = begin; k < end; ++k) rep = std::min(rep, order[k]);
        const double rep_value = values[rep];
        for (std::size_t k = begin; k < end; ++k) values[order[k]] = rep_value;
    };
    for (std::size_t k = 1; k < n; ++k) {
        if (values[order[k]] - values[order[k - 1]] < tol) continue;
        apply_cluster(cluster_start, k);
        cluster_start = k;
    }
    apply_cluster(cluster_start, n);
}

}  // namespace

MaterialField merge_tolerances(const MaterialField& field, double tol_e, double tol_nu,
                               double tol_rho) {
    validate_field(field);
    const std::size_t n = field.materials.size();
    std::vector<double> e(n), nu(n), rho(n);
    for (std::size_t i = 0; i < n; ++i) {
        e[i] = field.materials[i].e;
        nu[i] = field.materials[i].nu;
        rho[i] = field.materials[i].rho;
    }
    merge_property(e, tol_e);
    merge_property(nu, tol_nu);
    merge_property(rho, tol_rho);

    MaterialField out;
    out.vox = field.vox;
    out.materials.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.materials[i] = {e[i], nu[i], rho[i]};
    return out;
}

LameParams lame(double e, double nu) {
    if (!(e > 0.0)) throw std::invalid_argument("lame: E must be > 0");
    if (!(nu < 0.5)) throw std::invalid_argument("lame: singular at nu >= 0.5");
    LameParams p;
    p.lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    p.mu = e / (2.0 * (1.0 + nu));
    return p;
}

StressEnergy corotational(const Eigen::Matrix3d& f, double lambda, double mu) {
    if (!f.allFinite()) throw std::invalid_argument("corotational: non-finite F");
    if (!(f.determinant() > 0.0))
        throw std::invalid_argument("corotational: det F must be > 0");
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d s = svd.matrixV() * svd.singularValues().asDiagonal() *
                              svd.matrixV().transpose();
    const Eigen::Matrix3d eps = s - Eigen::Matrix3d::Identity();
    StressEnergy out;
    out.energy = mu * eps.cwiseProduct(eps).sum() + 0.5 * lambda * eps.trace() * eps.trace();
    out.stress = 2.0 * mu * eps + lambda * eps.trace() * Eigen::Matrix3d::Identity();
    return out;
}

StressEnergy neo_hookean(const Eigen::Matrix3d& f, double lambda, double mu) {
    if (!f.allFinite()) throw std::invalid_argument("neo_hookean: non-finite F");
    const double j = f.determinant();
    if (!(j > 0.0)) throw std::invalid_argument("neo_hookean: det F must be > 0");
    const double log_j = std::log(j);
    const Eigen::Matrix3d c = f.transpose() * f;
    const Eigen::Matrix3d b = f * f.transpose();
    StressEnergy out;
    out.energy = 0.5 * mu * (c.trace() - 3.0 - 2.0 * log_j) + 0.5 * lambda * log_j * log_j;
    out.stress = mu * (b - Eigen::Matrix3d::Identity()) +
                 lambda * log_j * Eigen::Matrix3d::Identity();
    return out;
}

Eigen::Matrix3d deform_splat_covariance(const GaussianSplat& splat, const Eigen::Matrix3d& f,
                                        double eps) {
    if (!(eps > 0.0))
        throw std::invalid_argument("deform_splat_covariance: eps must be > 0");
    const Eigen::Matrix3d l = splat_rotation(splat) * splat.scales.asDiagonal();
    const Eigen::Matrix3d m = f * l;
    return m * m.transpose() + eps * Eigen::Matrix3d::Identity();
}

}  // namespace matfield

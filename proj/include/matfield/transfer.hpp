#pragma once

#include <Eigen/Dense>
#include <vector>

#include "matfield/mtd.hpp"
#include "matfield/voxelizer.hpp"

namespace matfield {

// Voxelization plus one material triplet per voxel.
struct MaterialField {
    SolidVoxelization vox;
    std::vector<MaterialTriplet> materials;
};

void validate_field(const MaterialField& field);

// Nearest-voxel-center lookup; ties resolve to the lowest voxel index.
std::vector<MaterialTriplet> nearest_material(const MaterialField& field,
                                              const std::vector<Eigen::Vector3d>& queries);

// Per-property single-linkage clustering at the given tolerances; cluster
// members take the cluster's first-occurring value.
MaterialField merge_tolerances(const MaterialField& field, double tol_e = 10.0,
                               double tol_nu = 1e-3, double tol_rho = 10.0);

// lambda = E nu / ((1+nu)(1-2nu)), mu = E / (2(1+nu)).
struct LameParams {
    double lambda = 0.0;
    double mu = 0.0;
};

LameParams lame(double e, double nu);

struct StressEnergy {
    double energy = 0.0;            // W, Pa
    Eigen::Matrix3d stress;         // Kirchhoff tau, Pa
};

// Corotational Hookean model on the polar stretch S = V diag(sigma) V^T:
// W = mu eps:eps + lambda/2 tr(eps)^2, tau = 2 mu eps + lambda tr(eps) I.
StressEnergy corotational(const Eigen::Matrix3d& f, double lambda, double mu);

// Compressible Neo-Hookean with volumetric regularization:
// W = mu/2 (tr C - 3 - 2 ln J) + lambda/2 (ln J)^2, tau = mu (B - I) + lambda ln J I.
StressEnergy neo_hookean(const Eigen::Matrix3d& f, double lambda, double mu);

// Sigma = (F L)(F L)^T + eps I with L = R0 diag(s0); SPD for any F.
Eigen::Matrix3d deform_splat_covariance(const GaussianSplat& splat, const Eigen::Matrix3d& f,
                                        double eps);

}  // namespace matfield

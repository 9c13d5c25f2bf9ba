#pragma once

#include "georefine/mesh.hpp"

#include <Eigen/Dense>

namespace georefine {

struct CgOptions
{
    double tolerance = 1e-8; // on ||Ax - b|| / ||b||
    int max_iterations = 0;  // 0: ten times the dimension
};

struct CgResult
{
    Eigen::VectorXd x;
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Unpreconditioned conjugate gradient for symmetric positive definite A.
/// Throws when the tolerance is not met within the iteration budget.
CgResult solve_spd(const SparseMatrix& a, const Eigen::VectorXd& b, const CgOptions& options = {},
                   Exec exec = Exec::Parallel);

struct SmoothConfig
{
    double lambda = 0.05;
    int iterations = 10;
    double cg_tol = 1e-8;
    int cg_max_iter = 0; // 0: ten times the vertex count

    void validate() const;
};

/// Repeatedly solves (I + lambda L) X = rhs per coordinate column, starting
/// from rhs = D and feeding each result back in. L stays fixed throughout.
Eigen::MatrixX3d smooth_displacements(const SparseMatrix& laplacian, const Eigen::MatrixX3d& displacements,
                                      const SmoothConfig& config, Exec exec = Exec::Parallel);

/// Initial vertices plus displacements; rows of X that are exactly zero leave
/// their vertex bitwise untouched.
TriMesh apply_refinement(const TriMesh& initial, const Eigen::MatrixX3d& displacements);

/// Sum over coordinate columns of x^T L x.
double laplacian_energy(const SparseMatrix& laplacian, const Eigen::MatrixX3d& x);

} // namespace georefine

#include "georefine/smooth.hpp"

#include <cmath>
#include <sstream>

namespace georefine {

namespace {

double dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

} // namespace

CgResult solve_spd(const SparseMatrix& a, const Eigen::VectorXd& b, const CgOptions& options, Exec exec)
{
    const int n = a.dimension();
    if (b.size() != n)
        throw Error("right-hand side has length " + std::to_string(b.size()) + ", matrix dimension is " +
                    std::to_string(n));
    if (!(options.tolerance > 0.0))
        throw Error("CG tolerance must be positive");
    CgResult result;
    result.x = Eigen::VectorXd::Zero(n);
    const double bnorm = std::sqrt(dot(b, b));
    if (bnorm == 0.0)
        return result;
    if (!std::isfinite(bnorm))
        throw Error("CG right-hand side is not finite");

    const int max_iter = options.max_iterations > 0 ? options.max_iterations : 10 * std::max(n, 1);
    auto matvec = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
        a.multiply(std::span<const double>(x.data(), n), std::span<double>(y.data(), n), exec);
    };

    Eigen::VectorXd r = b;
    Eigen::VectorXd p = r;
    Eigen::VectorXd ap(n);
    double rr = dot(r, r);
    const double target = options.tolerance * bnorm;
    int it = 0;
    while (std::sqrt(rr) > target && it < max_iter) {
        matvec(p, ap);
        const double pap = dot(p, ap);
        if (!(pap > 0.0))
            throw Error("CG breakdown: matrix is not positive definite (p^T A p = " + std::to_string(pap) + ")");
        const double alpha = rr / pap;
        result.x += alpha * p;
        r -= alpha * ap;
        const double rr_new = dot(r, r);
        p = r + (rr_new / rr) * p;
        rr = rr_new;
        ++it;
    }

    // Report the true residual rather than the recursively updated one.
    Eigen::VectorXd ax(n);
    matvec(result.x, ax);
    const Eigen::VectorXd res = b - ax;
    result.iterations = it;
    result.relative_residual = std::sqrt(dot(res, res)) / bnorm;
    if (!(result.relative_residual <= options.tolerance)) {
        std::ostringstream msg;
        msg << "CG did not converge: relative residual " << result.relative_residual << " after " << it
            << " iterations (tolerance " << options.tolerance << ")";
        throw Error(msg.str());
    }
    return result;
}

void SmoothConfig::validate() const
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw Error("smoothing lambda must be a finite non-negative number");
    if (iterations < 1)
        throw Error("smoothing needs at least one iteration");
    if (!(cg_tol > 0.0))
        throw Error("CG tolerance must be positive");
    if (cg_max_iter < 0)
        throw Error("CG iteration cap must be non-negative");
}

Eigen::MatrixX3d smooth_displacements(const SparseMatrix& laplacian, const Eigen::MatrixX3d& displacements,
                                      const SmoothConfig& config, Exec exec)
{
    config.validate();
    if (displacements.rows() != laplacian.dimension())
        throw Error("displacement rows (" + std::to_string(displacements.rows()) + ") do not match the Laplacian (" +
                    std::to_string(laplacian.dimension()) + ")");
    if (config.lambda == 0.0)
        return displacements;

    const SparseMatrix system = laplacian.shifted_identity(config.lambda);
    const CgOptions cg{config.cg_tol, config.cg_max_iter};
    Eigen::MatrixX3d x = displacements;
    for (int pass = 0; pass < config.iterations; ++pass) {
        Eigen::MatrixX3d next(x.rows(), 3);
        if (exec == Exec::Parallel) {
            // The three columns are independent solves.
            std::string error;
#pragma omp parallel for schedule(static, 1)
            for (int c = 0; c < 3; ++c) {
                try {
                    next.col(c) = solve_spd(system, x.col(c), cg, Exec::Serial).x;
                } catch (const Error& e) {
#pragma omp critical
                    if (error.empty())
                        error = e.what();
                }
            }
            if (!error.empty())
                throw Error(error);
        } else {
            for (int c = 0; c < 3; ++c)
                next.col(c) = solve_spd(system, x.col(c), cg, Exec::Serial).x;
        }
        x = std::move(next);
    }
    return x;
}

TriMesh apply_refinement(const TriMesh& initial, const Eigen::MatrixX3d& displacements)
{
    if (displacements.rows() != static_cast<Eigen::Index>(initial.vertices.size()))
        throw Error("displacement rows (" + std::to_string(displacements.rows()) + ") do not match the mesh (" +
                    std::to_string(initial.vertices.size()) + " vertices)");
    TriMesh out = initial;
    for (std::size_t v = 0; v < out.vertices.size(); ++v) {
        const Vec3 d = displacements.row(static_cast<Eigen::Index>(v)).transpose();
        if (d.isZero(0.0))
            continue;
        out.vertices[v] += d;
    }
    return out;
}

double laplacian_energy(const SparseMatrix& laplacian, const Eigen::MatrixX3d& x)
{
    if (x.rows() != laplacian.dimension())
        throw Error("energy input does not match the Laplacian dimension");
    double e = 0.0;
    for (int c = 0; c < 3; ++c) {
        const Eigen::VectorXd col = x.col(c);
        e += laplacian.quadratic_form(std::span<const double>(col.data(), col.size()));
    }
    return e;
}

} // namespace georefine

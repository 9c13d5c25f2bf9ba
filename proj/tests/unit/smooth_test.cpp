#include "doctest.h"
#include "helpers.hpp"

#include "georefine/morphable.hpp"
#include "georefine/smooth.hpp"

#include <cmath>
#include <random>

using namespace georefine;

namespace {

Eigen::MatrixX3d random_displacements(Eigen::Index n, std::mt19937_64& rng, double scale = 0.01)
{
    std::normal_distribution<double> d(0.0, scale);
    Eigen::MatrixX3d x(n, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x.data()[i] = d(rng);
    return x;
}

SparseMatrix dense_to_sparse(const Eigen::MatrixXd& a)
{
    std::vector<SparseMatrix::Triplet> t;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            if (a(i, j) != 0.0)
                t.push_back({i, j, a(i, j)});
    return SparseMatrix::from_triplets(static_cast<int>(a.rows()), t);
}

} // namespace

TEST_CASE("cg: identity and diagonal systems")
{
    Eigen::VectorXd b(4);
    b << 1.0, -2.0, 0.5, 3.0;
    CgResult r = solve_spd(SparseMatrix::identity(4), b);
    CHECK((r.x - b).norm() < 1e-14);

    std::vector<SparseMatrix::Triplet> t{{0, 0, 2.0}, {1, 1, 4.0}};
    SparseMatrix a = SparseMatrix::from_triplets(2, t);
    Eigen::VectorXd b2(2);
    b2 << 2.0, 4.0;
    CgResult d = solve_spd(a, b2);
    CHECK(std::abs(d.x[0] - 1.0) < 1e-14);
    CHECK(std::abs(d.x[1] - 1.0) < 1e-14);

    CgResult z = solve_spd(a, Eigen::VectorXd::Zero(2));
    CHECK(z.x.isZero());
    CHECK(z.iterations == 0);
}

TEST_CASE("cg: random 50x50 SPD system")
{
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd m(50, 50);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = nd(rng);
    Eigen::MatrixXd a = m.transpose() * m + Eigen::MatrixXd::Identity(50, 50);
    Eigen::VectorXd b(50);
    for (auto& x : b)
        x = nd(rng);
    SparseMatrix s = dense_to_sparse(a);
    CgResult r = solve_spd(s, b);
    const double residual = (a * r.x - b).norm() / b.norm();
    CHECK(residual <= 1e-8);
    CHECK(r.relative_residual <= 1e-8);
    CHECK((r.x - a.ldlt().solve(b)).norm() < 1e-6 * r.x.norm());
    CHECK(solve_spd(s, b, {}, Exec::Serial).x == solve_spd(s, b, {}, Exec::Parallel).x);
}

TEST_CASE("cg: throws when the budget is too small")
{
    SparseMatrix L = cotangent_laplacian(make_icosphere(3));
    SparseMatrix a = L.shifted_identity(10.0);
    Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(a.dimension(), -1.0, 1.0);
    CgOptions o;
    o.max_iterations = 2;
    CHECK_THROWS_AS(solve_spd(a, b, o), Error);
    CHECK_THROWS_AS(solve_spd(a, Eigen::VectorXd::Ones(3)), Error);
}

TEST_CASE("smoothing: zero, identity and constant inputs")
{
    TriMesh mesh = make_icosphere(3, 0.09);
    SparseMatrix L = cotangent_laplacian(mesh);
    const Eigen::Index n = L.dimension();
    SmoothConfig cfg;

    CHECK(smooth_displacements(L, Eigen::MatrixX3d::Zero(n, 3), cfg).isZero());

    std::mt19937_64 rng(3);
    Eigen::MatrixX3d d = random_displacements(n, rng);
    SmoothConfig id = cfg;
    id.lambda = 0.0;
    CHECK(smooth_displacements(L, d, id) == d);

    Eigen::MatrixX3d c(n, 3);
    c.rowwise() = Eigen::RowVector3d(0.01, -0.02, 0.005);
    // (I + lambda L) c = c exactly up to the row-sum error of L
    Eigen::VectorXd col = c.col(0);
    CHECK((L.shifted_identity(cfg.lambda) * col - col).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::MatrixX3d x = smooth_displacements(L, c, cfg);
    CHECK((x - c).norm() <= 10 * cfg.cg_tol * c.norm());
}

TEST_CASE("smoothing contracts and lambda lowers high-frequency energy")
{
    BlendshapeModel model = generate_synthetic_model(2, 3);
    SparseMatrix L = cotangent_laplacian(model.template_mesh);
    std::mt19937_64 rng(21);
    SmoothConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::MatrixX3d d = random_displacements(L.dimension(), rng);
        Eigen::MatrixX3d x = smooth_displacements(L, d, cfg);
        REQUIRE(x.norm() <= d.norm() + 1e-9);
    }
    Eigen::MatrixX3d d = random_displacements(L.dimension(), rng);
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 0.01, 0.05, 0.2, 1.0}) {
        cfg.lambda = lambda;
        const double e = laplacian_energy(L, smooth_displacements(L, d, cfg));
        CHECK(e <= prev);
        prev = e;
    }
}

TEST_CASE("smoothing: more passes smooth more, serial equals parallel")
{
    TriMesh mesh = make_icosphere(3, 0.09);
    SparseMatrix L = cotangent_laplacian(mesh);
    std::mt19937_64 rng(8);
    Eigen::MatrixX3d d = random_displacements(L.dimension(), rng);
    SmoothConfig one;
    one.iterations = 1;
    SmoothConfig ten;
    CHECK(laplacian_energy(L, smooth_displacements(L, d, ten)) < laplacian_energy(L, smooth_displacements(L, d, one)));
    CHECK(smooth_displacements(L, d, ten, Exec::Serial) == smooth_displacements(L, d, ten, Exec::Parallel));

    SmoothConfig bad;
    bad.lambda = -1.0;
    CHECK_THROWS_AS(smooth_displacements(L, d, bad), Error);
    CHECK_THROWS_AS(smooth_displacements(L, Eigen::MatrixX3d::Zero(3, 3), ten), Error);
}

TEST_CASE("apply_refinement adds displacements and leaves zero rows bitwise")
{
    TriMesh mesh = make_icosphere(2, 0.09);
    const Eigen::Index n = static_cast<Eigen::Index>(mesh.num_vertices());
    CHECK(apply_refinement(mesh, Eigen::MatrixX3d::Zero(n, 3)).vertices == mesh.vertices);

    Eigen::MatrixX3d up(n, 3);
    up.rowwise() = Eigen::RowVector3d(0, 0, 0.01);
    TriMesh moved = apply_refinement(mesh, up);
    for (Eigen::Index v = 0; v < n; ++v)
        CHECK((moved.vertices[v] - mesh.vertices[v] - Vec3(0, 0, 0.01)).norm() < 1e-17);
    CHECK(moved.faces == mesh.faces);

    std::mt19937_64 rng(1);
    Eigen::MatrixX3d x = random_displacements(n, rng);
    x.row(3).setZero();
    x.row(7).setZero();
    TriMesh r = apply_refinement(mesh, x);
    CHECK(r.vertices[3] == mesh.vertices[3]);
    CHECK(r.vertices[7] == mesh.vertices[7]);
    for (Eigen::Index v = 0; v < n; ++v)
        CHECK(r.vertices[v] == mesh.vertices[v] + x.row(v).transpose());
    CHECK_THROWS_AS(apply_refinement(mesh, Eigen::MatrixX3d::Zero(n + 1, 3)), Error);
}

TEST_CASE("refined sphere gets closer to the true surface")
{
    // displacement towards a sphere of radius 0.09 on the frontal cap, plus noise
    TriMesh mesh = make_icosphere(3, 0.08);
    SparseMatrix L = cotangent_laplacian(mesh);
    const auto normals = vertex_normals(mesh);
    const Eigen::Index n = static_cast<Eigen::Index>(mesh.num_vertices());
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(0.0, 0.002);
    Eigen::MatrixX3d d = Eigen::MatrixX3d::Zero(n, 3);
    for (Eigen::Index v = 0; v < n; ++v)
        if (normals[v].z() > 0.0)
            d.row(v) = ((0.01 + noise(rng)) * normals[v]).transpose();
    TriMesh refined = apply_refinement(mesh, smooth_displacements(L, d, SmoothConfig{}));
    double before = 0.0, after = 0.0;
    int cap = 0;
    for (Eigen::Index v = 0; v < n; ++v)
        if (normals[v].z() > 0.5) {
            before += std::abs(mesh.vertices[v].norm() - 0.09);
            after += std::abs(refined.vertices[v].norm() - 0.09);
            ++cap;
        }
    REQUIRE(cap > 0);
    CHECK(after <= before);
}

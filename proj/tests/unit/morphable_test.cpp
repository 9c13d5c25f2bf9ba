#include "doctest.h"
#include "helpers.hpp"

#include "georefine/morphable.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <random>

using namespace georefine;

namespace {

Eigen::MatrixXd positions(const TriMesh& m)
{
    Eigen::MatrixXd p(m.num_vertices(), 3);
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
        p.row(static_cast<Eigen::Index>(i)) = m.vertices[i].transpose();
    return p;
}

Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double scale)
{
    std::normal_distribution<double> d(0.0, scale);
    Eigen::VectorXd v(n);
    for (auto& x : v)
        x = d(rng);
    return v;
}

} // namespace

TEST_CASE("synthetic model is valid and deterministic")
{
    BlendshapeModel a = generate_synthetic_model(11, 3);
    BlendshapeModel b = generate_synthetic_model(11, 3);
    CHECK_NOTHROW(a.validate());
    CHECK(a.shape_basis == b.shape_basis);
    CHECK(a.expr_basis == b.expr_basis);
    CHECK(a.pose_basis == b.pose_basis);
    CHECK(a.skin_weights == b.skin_weights);
    CHECK(a.template_mesh.vertices == b.template_mesh.vertices);
    CHECK(a.template_mesh.faces == b.template_mesh.faces);
    CHECK(generate_synthetic_model(12, 3).shape_basis != a.shape_basis);

    CHECK(a.skin_weights.minCoeff() >= 0.0);
    CHECK(a.skin_weights.maxCoeff() <= 1.0);
    CHECK((a.skin_weights.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("synthetic model: 642 vertices before the neck opening is cut")
{
    CHECK(make_icosphere(3).num_vertices() == 642);
    BlendshapeModel m = generate_synthetic_model(1, 3);
    CHECK(m.num_vertices() < 642);
    CHECK(m.num_vertices() > 500);
    CHECK(m.shape_basis.rows() == 3 * m.num_vertices());
    CHECK(m.expr_basis.rows() == 3 * m.num_vertices());
    CHECK(m.pose_basis.cols() == kPoseFeatures);
    CHECK_THROWS_AS(generate_synthetic_model(1, 0), Error);
    CHECK_THROWS_AS(generate_synthetic_model(1, 6), Error);
}

TEST_CASE("synthetic bases have zero mean displacement")
{
    BlendshapeModel m = generate_synthetic_model(2, 3);
    const int n = m.num_vertices();
    for (const Eigen::MatrixXd* basis : {&m.shape_basis, &m.expr_basis}) {
        for (Eigen::Index k = 0; k < basis->cols(); ++k) {
            Vec3 mean = Vec3::Zero();
            for (int v = 0; v < n; ++v)
                mean += basis->col(k).segment<3>(3 * v);
            CHECK((mean / n).norm() < 1e-8);
        }
    }
}

TEST_CASE("rest pose reproduces the template exactly")
{
    BlendshapeModel m = generate_synthetic_model(4, 3);
    TriMesh out = evaluate_model(m, HeadParams::zeros(m.num_shape(), m.num_expr()));
    CHECK(out.vertices == m.template_mesh.vertices);
    CHECK(out.faces == m.template_mesh.faces);
}

TEST_CASE("unit shape coefficient adds the first basis column")
{
    BlendshapeModel m = generate_synthetic_model(4, 3);
    HeadParams p = HeadParams::zeros(m.num_shape(), m.num_expr());
    p.beta[0] = 1.0;
    TriMesh out = evaluate_model(m, p);
    for (int v = 0; v < m.num_vertices(); ++v) {
        Vec3 expect = m.template_mesh.vertices[v] + m.shape_basis.col(0).segment<3>(3 * v);
        CHECK((out.vertices[v] - expect).norm() < 1e-15);
    }
}

TEST_CASE("global rotation of 90 degrees about z maps (x, y, z) to (-y, x, z)")
{
    BlendshapeModel m = generate_synthetic_model(4, 2);
    m.skin_weights.setZero();
    m.skin_weights.col(kNeck).setOnes();
    HeadParams p = HeadParams::zeros(m.num_shape(), m.num_expr());
    p.theta.segment<3>(0) = Vec3(0, 0, M_PI / 2);
    TriMesh out = evaluate_model(m, p);
    for (int v = 0; v < m.num_vertices(); ++v) {
        const Vec3& q = m.template_mesh.vertices[v];
        CHECK((out.vertices[v] - Vec3(-q.y(), q.x(), q.z())).norm() < 1e-12);
    }
}

TEST_CASE("linear in shape and expression at fixed pose")
{
    BlendshapeModel m = generate_synthetic_model(5, 3);
    std::mt19937_64 rng(3);
    HeadParams zero = HeadParams::zeros(m.num_shape(), m.num_expr());
    HeadParams a = zero, b = zero, ab = zero;
    a.beta = random_vector(m.num_shape(), rng, 1.0);
    b.beta = random_vector(m.num_shape(), rng, 1.0);
    a.psi = random_vector(m.num_expr(), rng, 1.0);
    ab.beta = a.beta + b.beta;
    ab.psi = a.psi;
    Eigen::MatrixXd lhs = positions(evaluate_model(m, ab));
    Eigen::MatrixXd rhs = positions(evaluate_model(m, a)) + positions(evaluate_model(m, b)) - positions(evaluate_model(m, zero));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("global rotation commutes with the posed output")
{
    BlendshapeModel m = generate_synthetic_model(6, 3);
    std::mt19937_64 rng(8);
    HeadParams p = HeadParams::zeros(m.num_shape(), m.num_expr());
    p.beta = random_vector(m.num_shape(), rng, 0.5);
    p.psi = random_vector(m.num_expr(), rng, 0.5);
    p.theta = random_vector(kThetaSize, rng, 0.2);
    p.theta.segment<3>(0).setZero();
    TriMesh base = evaluate_model(m, p);

    const Vec3 g(0.3, -0.5, 0.2);
    p.theta.segment<3>(0) = g;
    TriMesh rotated = evaluate_model(m, p);
    const Eigen::Matrix3d r = axis_angle_to_matrix(g);
    for (int v = 0; v < m.num_vertices(); ++v)
        CHECK((rotated.vertices[v] - r * base.vertices[v]).norm() < 1e-9);
}

TEST_CASE("axis-angle matches Eigen")
{
    const Vec3 aa(0.4, -1.1, 0.7);
    Eigen::Matrix3d ref = Eigen::AngleAxisd(aa.norm(), aa.normalized()).toRotationMatrix();
    CHECK((axis_angle_to_matrix(aa) - ref).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(axis_angle_to_matrix(Vec3::Zero()) == Eigen::Matrix3d::Identity());
}

TEST_CASE("jaw rotation moves only jaw-weighted vertices")
{
    BlendshapeModel m = generate_synthetic_model(7, 3);
    HeadParams p = HeadParams::zeros(m.num_shape(), m.num_expr());
    p.theta.segment<3>(3 + 3 * kJaw) = Vec3(0.3, 0, 0);
    TriMesh out = evaluate_model(m, p);
    int moved = 0;
    for (int v = 0; v < m.num_vertices(); ++v) {
        const bool jaw = m.skin_weights(v, kJaw) > 0.0;
        const bool corrective = m.pose_basis.row(3 * v).cwiseAbs().sum() + m.pose_basis.row(3 * v + 1).cwiseAbs().sum() +
                                    m.pose_basis.row(3 * v + 2).cwiseAbs().sum() > 0.0;
        if ((out.vertices[v] - m.template_mesh.vertices[v]).norm() > 0.0) {
            ++moved;
            CHECK((jaw || corrective));
        }
    }
    CHECK(moved > 0);
}

TEST_CASE("parameter size mismatch throws")
{
    BlendshapeModel m = generate_synthetic_model(7, 2);
    HeadParams p = HeadParams::zeros(m.num_shape() + 1, m.num_expr());
    CHECK_THROWS_AS(evaluate_model(m, p), Error);
}

TEST_CASE("manifest round trip is bitwise")
{
    BlendshapeModel m = generate_synthetic_model(9, 2, 4, 3);
    auto dir = testutil::temp_dir("manifest");
    save_model_manifest(m, dir / "model.json");
    BlendshapeModel r = load_model_manifest(dir / "model.json");
    CHECK(r.template_mesh.vertices == m.template_mesh.vertices);
    CHECK(r.template_mesh.faces == m.template_mesh.faces);
    CHECK(r.shape_basis == m.shape_basis);
    CHECK(r.expr_basis == m.expr_basis);
    CHECK(r.pose_basis == m.pose_basis);
    CHECK(r.skin_weights == m.skin_weights);
    for (int j = 0; j < kNumJoints; ++j)
        CHECK(r.joints[j] == m.joints[j]);
    CHECK_THROWS_AS(load_model_manifest(dir / "missing.json"), Error);
}

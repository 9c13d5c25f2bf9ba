#include "doctest.h"
#include "helpers.hpp"

#include "georefine/field.hpp"

#include <cmath>
#include <fstream>
#include <random>

using namespace georefine;

namespace {

GridSpec unit_grid(int r) { return GridSpec::cube(r, Aabb{Vec3::Zero(), Vec3::Ones()}); }

TriMesh point_cloud(std::vector<Vec3> pts)
{
    TriMesh m;
    m.vertices = std::move(pts);
    return m;
}

double l1_mass(const LatentVolume& v)
{
    double s = 0.0;
    for (double x : v.data)
        s += std::abs(x);
    return s;
}

} // namespace

TEST_CASE("splat identity: vertex on a node, no blur")
{
    GridSpec g = unit_grid(16);
    TriMesh m = point_cloud({g.node(5, 7, 9)});
    LatentCodes c(1, 3);
    c << 0.5, -2.0, 3.0;
    for (BlurMode mode : {BlurMode::Box, BlurMode::Normalized}) {
        LatentVolume v = LatentDiffusion(m, g, 0, mode).apply(c);
        const std::size_t hit = g.index(5, 7, 9);
        for (std::size_t cell = 0; cell < g.num_cells(); ++cell)
            for (int k = 0; k < 3; ++k) {
                const double expect = cell == hit ? c(0, k) : 0.0;
                REQUIRE(v.data[cell * 3 + k] == expect);
            }
    }
}

TEST_CASE("splat normalises by accumulated weight")
{
    GridSpec g = unit_grid(16);
    const Vec3 p = g.node(3, 3, 3) + 0.3 * g.cell_size();
    TriMesh m = point_cloud({p, p});
    LatentCodes c(2, 1);
    c << 1.0, 3.0;
    LatentVolume v = LatentDiffusion(m, g, 0).apply(c);
    TrilinearStencil s;
    REQUIRE(trilinear_stencil(g, p, s));
    for (int k = 0; k < 8; ++k)
        CHECK(v.data[s.index[k]] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("normalized blur preserves a constant code over its support")
{
    TriMesh sphere = make_icosphere(3, 0.3, Vec3::Constant(0.5));
    LatentCodes c(static_cast<Eigen::Index>(sphere.num_vertices()), 4);
    for (Eigen::Index i = 0; i < c.rows(); ++i)
        c.row(i) << 0.25, -1.5, 2.0, 7.0;
    for (int passes : {0, 1, 3}) {
        LatentVolume v = LatentDiffusion(sphere, unit_grid(24), passes, BlurMode::Normalized).apply(c);
        std::size_t nonzero = 0;
        for (std::size_t cell = 0; cell < v.grid.num_cells(); ++cell) {
            const double* x = v.cell(cell);
            if (x[0] == 0.0 && x[1] == 0.0 && x[2] == 0.0 && x[3] == 0.0)
                continue;
            ++nonzero;
            CHECK(std::abs(x[0] - 0.25) < 1e-12);
            CHECK(std::abs(x[1] + 1.5) < 1e-12);
            CHECK(std::abs(x[2] - 2.0) < 1e-12);
            CHECK(std::abs(x[3] - 7.0) < 1e-12);
        }
        CHECK(nonzero > 0);
    }
}

TEST_CASE("box blur conserves L1 mass for interior splats")
{
    GridSpec g = unit_grid(32);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.3, 0.7), code(0.1, 2.0);
    std::vector<Vec3> pts;
    for (int i = 0; i < 50; ++i)
        pts.emplace_back(u(rng), u(rng), u(rng));
    TriMesh m = point_cloud(pts);
    LatentCodes c(50, 2);
    for (Eigen::Index i = 0; i < c.size(); ++i)
        c.data()[i] = code(rng);
    const double before = l1_mass(LatentDiffusion(m, g, 0).apply(c));
    const double after = l1_mass(LatentDiffusion(m, g, 1).apply(c));
    CHECK(std::abs(after - before) < 1e-6);
    CHECK(std::abs(l1_mass(LatentDiffusion(m, g, 3).apply(c)) - before) < 1e-6);
}

TEST_CASE("box blur spreads one pass per axis and leaves far cells empty")
{
    GridSpec g = unit_grid(16);
    TriMesh m = point_cloud({g.node(8, 8, 8)});
    LatentCodes c = LatentCodes::Constant(1, 1, 27.0);
    LatentVolume v = LatentDiffusion(m, g, 1).apply(c);
    CHECK(v.data[g.index(8, 8, 8)] == doctest::Approx(1.0));
    CHECK(v.data[g.index(9, 7, 9)] == doctest::Approx(1.0));
    CHECK(v.data[g.index(10, 8, 8)] == 0.0);
}

TEST_CASE("diffusion adjoint matches the forward map")
{
    TriMesh sphere = make_icosphere(2, 0.3, Vec3::Constant(0.5));
    const int dim = 3;
    const auto n = static_cast<Eigen::Index>(sphere.num_vertices());
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    for (BlurMode mode : {BlurMode::Box, BlurMode::Normalized}) {
        LatentDiffusion diff(sphere, unit_grid(20), 2, mode);
        std::vector<double> z(n * dim), y(diff.grid().num_cells() * dim);
        for (auto& x : z)
            x = nd(rng);
        for (auto& x : y)
            x = nd(rng);
        LatentVolume az = diff.apply(z, dim);
        std::vector<double> aty(z.size(), 0.0);
        diff.apply_transpose(y, dim, aty);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i)
            lhs += az.data[i] * y[i];
        for (std::size_t i = 0; i < z.size(); ++i)
            rhs += z[i] * aty[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("diffusion is identical for serial and parallel execution")
{
    TriMesh sphere = make_icosphere(3, 0.3, Vec3::Constant(0.5));
    LatentCodes c = LatentCodes::Random(static_cast<Eigen::Index>(sphere.num_vertices()), 8);
    LatentDiffusion diff(sphere, unit_grid(32), 3);
    CHECK(diff.apply(c, Exec::Serial).data == diff.apply(c, Exec::Parallel).data);
}

TEST_CASE("diffusion rejects vertices outside the bounds")
{
    TriMesh m = point_cloud({Vec3(0.5, 0.5, 0.5), Vec3(1.5, 0.5, 0.5)});
    try {
        LatentDiffusion(m, unit_grid(16), 1);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("vertex 1") != std::string::npos);
    }
    CHECK_THROWS_AS(diffuse_latents(LatentCodes::Zero(1, 1), point_cloud({Vec3::Zero()}), 8, 0), Error);
    CHECK_THROWS_AS(parse_blur_mode("gauss"), Error);
}

TEST_CASE("latent query: centres, midpoints, outside, linearity")
{
    LatentVolume v;
    v.grid = unit_grid(4);
    v.dim = 2;
    v.data.assign(v.grid.num_cells() * 2, 0.0);
    const std::size_t a = v.grid.index(1, 2, 1);
    v.data[a * 2] = 3.0;
    v.data[a * 2 + 1] = -1.0;

    Eigen::VectorXd at = v.query(v.grid.node(1, 2, 1));
    CHECK(at[0] == 3.0);
    CHECK(at[1] == -1.0);
    Eigen::VectorXd mid = v.query(0.5 * (v.grid.node(1, 2, 1) + v.grid.node(2, 2, 1)));
    CHECK(mid[0] == doctest::Approx(1.5));
    CHECK(mid[1] == doctest::Approx(-0.5));
    CHECK(v.query(Vec3(1.2, 0.5, 0.5)).isZero());
    CHECK(v.query(Vec3(-1e-9, 0.5, 0.5)).isZero());

    // affine field: trilinear interpolation reproduces it exactly between nodes
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) {
                const Vec3 p = v.grid.node(i, j, k);
                v.data[v.grid.index(i, j, k) * 2] = 2.0 * p.x() - p.y() + 0.5 * p.z() + 1.0;
                v.data[v.grid.index(i, j, k) * 2 + 1] = -p.z();
            }
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.125, 0.875);
    for (int t = 0; t < 200; ++t) {
        const Vec3 q(u(rng), u(rng), u(rng));
        Eigen::VectorXd r = v.query(q);
        CHECK(std::abs(r[0] - (2.0 * q.x() - q.y() + 0.5 * q.z() + 1.0)) < 1e-12);
        CHECK(std::abs(r[1] + q.z()) < 1e-12);
    }
}

TEST_CASE("analytic density examples")
{
    ShapeSpec unit = ShapeSpec::sphere(1.0);
    CHECK(analytic_density(unit, Vec3::Zero()) == doctest::Approx(unit.sigma_max).epsilon(1e-12));
    CHECK(analytic_density(unit, Vec3(0, 0, 1)) == doctest::Approx(unit.sigma_max / 2).epsilon(1e-12));
    CHECK(analytic_density(unit, Vec3(0, 1, 1).normalized()) == doctest::Approx(unit.sigma_max / 2).epsilon(1e-12));
    AnalyticDensity wide(unit);
    // sigmoid(-1 / 0.005) = 1 / (1 + e^200)
    const double far = analytic_density(unit, Vec3(2, 0, 0));
    CHECK(far < 1e-6 * unit.sigma_max);
    CHECK(far >= 0.0);
    CHECK(wide.density(Vec3(100, 0, 0)) == 0.0);
}

TEST_CASE("bumpy sphere radius and sdf")
{
    ShapePrimitive p;
    p.kind = ShapePrimitive::Kind::BumpySphere;
    p.radius = 0.1;
    p.bumps.push_back({Vec3::UnitZ(), 0.01, 20.0});
    CHECK(p.radius_along(Vec3::UnitZ()) == doctest::Approx(0.11));
    CHECK(p.radius_along(-Vec3::UnitZ()) == doctest::Approx(0.1 + 0.01 * std::exp(-40.0)));
    CHECK(std::abs(p.sdf(Vec3(0, 0, 0.11))) < 1e-12);
    CHECK(p.sdf(Vec3(0, 0, 0.2)) > 0.0);
    CHECK(p.sdf(Vec3::Zero()) < 0.0);
}

TEST_CASE("density sources stay finite and non-negative")
{
    ShapeSpec spec = ShapeSpec::sphere(0.09);
    ShapePrimitive e;
    e.kind = ShapePrimitive::Kind::Ellipsoid;
    e.radii = Vec3(0.05, 0.08, 0.03);
    e.center = Vec3(0.02, 0, 0.05);
    spec.shapes.push_back(e);
    AnalyticDensity a(spec);
    GridSpec g = GridSpec::cube(24, a.bounds());
    GridDensity grid(sample_density(a, g));
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (int t = 0; t < 100000; ++t) {
        const Vec3 q(u(rng), u(rng), u(rng));
        const double s1 = a.density(q), s2 = grid.density(q);
        REQUIRE(std::isfinite(s1));
        REQUIRE(std::isfinite(s2));
        REQUIRE(s1 >= 0.0);
        REQUIRE(s2 >= 0.0);
    }
}

TEST_CASE("grid density: constant, outside, clamped")
{
    VoxelGrid v;
    v.grid = unit_grid(4);
    v.data.assign(v.grid.num_cells(), 5.0f);
    CHECK(grid_density(v, Vec3(0.3, 0.7, 0.2)) == doctest::Approx(5.0));
    CHECK(grid_density(v, Vec3(0.01, 0.99, 0.5)) == doctest::Approx(5.0));
    CHECK(grid_density(v, Vec3(1.01, 0.5, 0.5)) == 0.0);
    std::fill(v.data.begin(), v.data.end(), -1.0f);
    CHECK(grid_density(v, Vec3(0.5, 0.5, 0.5)) == 0.0);
}

TEST_CASE("grid resampling of the analytic sphere at R=128")
{
    ShapeSpec spec = ShapeSpec::sphere(0.09);
    AnalyticDensity a(spec);
    GridSpec g = GridSpec::cube(128, a.bounds());
    VoxelGrid v = sample_density(a, g);
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    const Vec3 lo = g.bounds.min + 0.5 * g.cell_size();
    const Vec3 span = g.bounds.extent() - g.cell_size();
    for (int t = 0; t < 1000; ++t) {
        const Vec3 q = lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(span);
        worst = std::max(worst, std::abs(grid_density(v, q) - analytic_density(spec, q)));
    }
    CHECK(worst < 0.05 * spec.sigma_max);
}

TEST_CASE("sample_density is identical for serial and parallel execution")
{
    AnalyticDensity a(ShapeSpec::sphere(0.09));
    GridSpec g = GridSpec::cube(32, a.bounds());
    CHECK(sample_density(a, g, Exec::Serial).data == sample_density(a, g, Exec::Parallel).data);
}

TEST_CASE("voxel grid file round trip")
{
    VoxelGrid v;
    v.grid.resolution = {3, 4, 5};
    v.grid.bounds = Aabb{Vec3(-1, -2, -3), Vec3(1, 2, 0.5)};
    v.channels = 2;
    for (std::size_t i = 0; i < v.grid.num_cells() * 2; ++i)
        v.data.push_back(static_cast<float>(i) * 0.25f - 3.0f);
    auto dir = testutil::temp_dir("voxels");
    write_voxel_grid(dir / "g.vox", v);
    VoxelGrid r = read_voxel_grid(dir / "g.vox");
    CHECK(r.grid.resolution == v.grid.resolution);
    CHECK(r.grid.bounds.min == v.grid.bounds.min);
    CHECK(r.grid.bounds.max == v.grid.bounds.max);
    CHECK(r.channels == 2);
    CHECK(r.data == v.data);

    {
        std::ofstream bad(dir / "bad.vox", std::ios::binary);
        bad << "{\"resolution\":[2,2,2],\"bounds_min\":[0,0,0],\"bounds_max\":[1,1,1],\"channels\":1}\n";
        bad << "short";
    }
    CHECK_THROWS_AS(read_voxel_grid(dir / "bad.vox"), Error);
}

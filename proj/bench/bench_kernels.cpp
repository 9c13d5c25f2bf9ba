// Serial reference kernels against their OpenMP counterparts.
#include "georefine/pipeline.hpp"

#include <benchmark/benchmark.h>

using namespace georefine;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) ? Exec::Parallel : Exec::Serial; }

void label(benchmark::State& state) { state.SetLabel(state.range(0) ? "openmp" : "serial"); }

void BM_RenderAnalytic(benchmark::State& state)
{
    const AnalyticScene scene(ShapeSpec::sphere(0.09), ColorSpec{});
    const Camera cam = Camera::look_at(Vec3(0, 0, 0.4), Vec3::Zero(), Vec3::UnitY(), 64, 64, 110.0);
    RenderOptions ro;
    ro.sampling.n_samples = 64;
    for (auto _ : state)
        benchmark::DoNotOptimize(render_image(scene, cam, ro, exec_of(state)));
    label(state);
}

void BM_RenderField(benchmark::State& state)
{
    const TriMesh mesh = make_icosphere(3, 0.09);
    FieldConfig cfg;
    cfg.resolution = 32;
    cfg.sigma_bias = 0.0;
    const RadianceField field(cfg, static_cast<int>(mesh.vertices.size()), 1, latent_bounds(mesh), 1);
    const PosedField posed(field, mesh, 0);
    const Camera cam = Camera::look_at(Vec3(0, 0, 0.4), Vec3::Zero(), Vec3::UnitY(), 32, 32, 60.0);
    RenderOptions ro;
    ro.sampling.n_samples = 32;
    for (auto _ : state)
        benchmark::DoNotOptimize(render_image(posed, cam, ro, exec_of(state)));
    label(state);
}

void BM_HeightField(benchmark::State& state)
{
    const AnalyticDensity density(ShapeSpec::sphere(0.09));
    HeightFieldOptions opts;
    opts.rx = opts.ry = 128;
    opts.z_samples = 256;
    for (auto _ : state)
        benchmark::DoNotOptimize(extract_height_field(density, opts, exec_of(state)));
    label(state);
}

void BM_Perturb(benchmark::State& state)
{
    const AnalyticDensity density(ShapeSpec::sphere(0.09));
    HeightFieldOptions opts;
    opts.rx = opts.ry = 128;
    const SdfSurface sdf(extract_height_field(density, opts));
    const TriMesh mesh = make_icosphere(4, 0.08);
    for (auto _ : state)
        benchmark::DoNotOptimize(perturb_vertices(mesh, sdf, PerturbConfig{}, exec_of(state)));
    label(state);
}

void BM_LaplacianMultiply(benchmark::State& state)
{
    const TriMesh mesh = make_icosphere(6);
    const SparseMatrix lap = cotangent_laplacian(mesh);
    std::vector<double> x(mesh.vertices.size(), 1.0), y(mesh.vertices.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = mesh.vertices[i].x();
    for (auto _ : state) {
        lap.multiply(x, y, exec_of(state));
        benchmark::DoNotOptimize(y.data());
    }
    label(state);
}

void BM_VertexNormals(benchmark::State& state)
{
    const TriMesh mesh = make_icosphere(6);
    for (auto _ : state)
        benchmark::DoNotOptimize(vertex_normals(mesh, exec_of(state)));
    label(state);
}

void BM_Diffusion(benchmark::State& state)
{
    const TriMesh mesh = make_icosphere(4, 0.09);
    const LatentDiffusion diff(mesh, GridSpec::cube(64, latent_bounds(mesh)), 4);
    SplitMix64 rng(3);
    LatentCodes codes(static_cast<Eigen::Index>(mesh.vertices.size()), kLatentDim);
    for (Eigen::Index i = 0; i < codes.size(); ++i)
        codes.data()[i] = rng.normal();
    for (auto _ : state)
        benchmark::DoNotOptimize(diff.apply(codes, exec_of(state)));
    label(state);
}

} // namespace

BENCHMARK(BM_RenderAnalytic)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RenderField)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HeightField)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Perturb)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LaplacianMultiply)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_VertexNormals)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Diffusion)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

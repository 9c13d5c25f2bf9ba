#include "doctest.h"

#include "georefine/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace georefine;

namespace {

RadianceField toy_field(int vertices, int frames, std::uint64_t seed = 5)
{
    FieldConfig cfg;
    cfg.hidden_width = 16;
    cfg.resolution = 16;
    cfg.blur_passes = 1;
    cfg.position_freqs = 4;
    cfg.direction_freqs = 2;
    cfg.latent_init = 1.0;
    cfg.sigma_bias = 0.0;
    cfg.density_scale = 20.0;
    return RadianceField(cfg, vertices, frames, Aabb{Vec3::Constant(-0.15), Vec3::Constant(0.15)}, seed);
}

std::vector<RayTarget> random_rays(int n, std::uint64_t seed, const Aabb& box)
{
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-0.06, 0.06), c(0.0, 1.0);
    std::vector<RayTarget> rays;
    while (static_cast<int>(rays.size()) < n) {
        Ray r;
        r.origin = Vec3(u(gen), u(gen), 0.4);
        r.direction = Vec3(u(gen), u(gen), -1.0).normalized();
        auto span = intersect_box(r.origin, r.direction, box);
        if (!span)
            continue;
        r.t_near = std::max(0.0, span->first);
        r.t_far = span->second;
        rays.push_back({r, Vec3(c(gen), c(gen), c(gen)), gen()});
    }
    return rays;
}

// Colour the training loss would see for one ray.
Vec3 field_colour(const RadianceField& field, const LatentVolume& volume, const RayTarget& rt, int frame,
                  const SampleOptions& o)
{
    std::vector<double> t(o.n_samples), delta(o.n_samples);
    SplitMix64 rng(rt.seed);
    stratified_samples(rt.ray.t_near, rt.ray.t_far, o.n_samples, o.stratified, rng, t, delta);
    std::vector<Vec3> pts(o.n_samples);
    for (int i = 0; i < o.n_samples; ++i)
        pts[i] = rt.ray.at(t[i]);
    SampleBatch batch;
    field.forward(volume, pts, rt.ray.direction, frame, batch);
    return composite(batch.sigma, delta, batch.rgb, o.background).rgb;
}

Frame grey_frame(int index, double value)
{
    Frame f;
    f.camera = Camera::look_at(Vec3(0, 0, 0.4), Vec3::Zero(), Vec3::UnitY(), 16, 16, 30.0);
    f.target = Image(16, 16, value);
    f.index = index;
    return f;
}

} // namespace

TEST_CASE("gradient vanishes when the targets are the field's own render")
{
    TriMesh anchors = make_icosphere(2, 0.08);
    RadianceField field = toy_field(static_cast<int>(anchors.num_vertices()), 2);
    LatentDiffusion diff = field.diffusion(anchors);
    LatentVolume vol = field.latent_volume(diff);
    SampleOptions o;
    o.n_samples = 24;
    auto rays = random_rays(32, 11, field.grid().bounds);
    for (auto& r : rays)
        r.target = field_colour(field, vol, r, 1, o);
    std::vector<double> grad(field.num_params());
    const double loss = ray_batch_loss(field, diff, rays, 1, o, grad);
    CHECK(loss < 1e-20);
    double norm = 0.0;
    for (double g : grad)
        norm += g * g;
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("loss without gradient matches loss with gradient and the manual MSE")
{
    TriMesh anchors = make_icosphere(2, 0.08);
    RadianceField field = toy_field(static_cast<int>(anchors.num_vertices()), 1);
    LatentDiffusion diff = field.diffusion(anchors);
    LatentVolume vol = field.latent_volume(diff);
    SampleOptions o;
    o.n_samples = 16;
    auto rays = random_rays(20, 2, field.grid().bounds);
    double manual = 0.0;
    for (const auto& r : rays)
        manual += (field_colour(field, vol, r, 0, o) - r.target).squaredNorm();
    manual /= 3.0 * rays.size();
    std::vector<double> grad(field.num_params());
    const double with = ray_batch_loss(field, diff, rays, 0, o, grad);
    const double without = ray_batch_loss(field, diff, rays, 0, o, {});
    CHECK(with == without);
    CHECK(with == doctest::Approx(manual).epsilon(1e-12));
    CHECK_THROWS_AS(ray_batch_loss(field, diff, {}, 0, o, {}), Error);
    std::vector<double> short_grad(3);
    CHECK_THROWS_AS(ray_batch_loss(field, diff, rays, 0, o, short_grad), Error);
}

TEST_CASE("full-field gradient matches central differences")
{
    TriMesh anchors = make_icosphere(2, 0.08);
    RadianceField field = toy_field(static_cast<int>(anchors.num_vertices()), 3);
    // Zero hidden biases put empty-space samples exactly on the ReLU kink.
    SplitMix64 jitter(12);
    for (double& p : field.params())
        p += 0.01 * jitter.normal();
    LatentDiffusion diff = field.diffusion(anchors);
    SampleOptions o;
    o.n_samples = 32;
    auto rays = random_rays(16, 7, field.grid().bounds);
    GradientCheckResult r = gradient_check(field, diff, rays, 2, o, 100, 1);
    REQUIRE(r.indices.size() == 100);
    CHECK(r.max_relative_error < 1e-3);
    // every parameter group is probed
    const std::size_t groups[4] = {field.sigma_offset(), field.color_offset(), field.embedding_offset(),
                                   field.code_offset()};
    for (int g = 0; g < 4; ++g) {
        const std::size_t hi = g < 3 ? groups[g + 1] : field.num_params();
        CHECK(std::any_of(r.indices.begin(), r.indices.end(),
                          [&](std::size_t i) { return i >= groups[g] && i < hi; }));
    }
    int nonzero = 0;
    for (double a : r.analytic)
        nonzero += std::abs(a) > 1e-8;
    CHECK(nonzero > 50);
}

TEST_CASE("gradient is independent of the chunking and execution policy")
{
    TriMesh anchors = make_icosphere(2, 0.08);
    RadianceField field = toy_field(static_cast<int>(anchors.num_vertices()), 1);
    LatentDiffusion diff = field.diffusion(anchors);
    SampleOptions o;
    o.n_samples = 16;
    auto rays = random_rays(40, 3, field.grid().bounds);
    std::vector<double> a(field.num_params()), b(field.num_params()), c(field.num_params());
    const double la = ray_batch_loss(field, diff, rays, 0, o, a, 8, Exec::Serial);
    const double lb = ray_batch_loss(field, diff, rays, 0, o, b, 8, Exec::Parallel);
    CHECK(la == lb);
    CHECK(a == b);
    ray_batch_loss(field, diff, rays, 0, o, c, 1, Exec::Serial);
    for (std::size_t i = 0; i < a.size(); ++i)
        REQUIRE(c[i] == doctest::Approx(a[i]).epsilon(1e-9).scale(1e-12));
}

TEST_CASE("mlp backward matches the closed form of a linear layer")
{
    Mlp net({3, 2});
    std::vector<double> p(net.num_params());
    SplitMix64 rng(9);
    net.initialize(p.data(), rng, 0.25);
    CHECK(p[6] == 0.25);
    CHECK(p[7] == 0.25);
    Eigen::MatrixXd x(3, 4);
    x << 1, 2, 3, 4, -1, 0, 1, 2, 0.5, 0.5, -0.5, 0.25;
    Mlp::Cache cache;
    net.forward(p.data(), x, cache);
    Eigen::Map<const Eigen::MatrixXd> w(p.data(), 2, 3);
    Eigen::Map<const Eigen::Vector2d> bias(p.data() + 6);
    CHECK((net.output(cache) - ((w * x).colwise() + bias)).norm() < 1e-14);

    Eigen::MatrixXd dy(2, 4);
    dy << 1, 0, -1, 2, 0.5, 1, 0, -1;
    std::vector<double> dp(net.num_params(), 0.0);
    Eigen::MatrixXd dx;
    net.backward(p.data(), cache, dy, dp.data(), &dx);
    Eigen::Map<const Eigen::MatrixXd> dw(dp.data(), 2, 3);
    CHECK((dw - dy * x.transpose()).norm() < 1e-7);
    CHECK(std::abs(dp[6] - dy.row(0).sum()) < 1e-7);
    CHECK(std::abs(dp[7] - dy.row(1).sum()) < 1e-7);
    CHECK((dx - w.transpose() * dy).norm() < 1e-7);
}

TEST_CASE("training a toy frame reduces the loss")
{
    TriMesh anchors = make_icosphere(2, 0.08);
    RadianceField field = toy_field(static_cast<int>(anchors.num_vertices()), 1);
    std::vector<TriMesh> meshes{anchors};
    std::vector<Frame> frames{grey_frame(0, 0.5)};
    TrainConfig cfg;
    cfg.steps = 200;
    cfg.rays_per_step = 64;
    cfg.lr = 1e-2;
    cfg.sampling.n_samples = 16;
    cfg.seed = 4;
    int calls = 0;
    TrainResult r = train_phase(field, meshes, frames, cfg, Exec::Parallel, [&](int, double) { ++calls; });
    REQUIRE(r.loss_history.size() == 200);
    CHECK(calls == 200);
    auto median = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        return v[v.size() / 2];
    };
    const double first = median({r.loss_history.begin(), r.loss_history.begin() + 50});
    const double last = median({r.loss_history.end() - 50, r.loss_history.end()});
    CHECK(last < 0.25 * first);
    for (int w = 1; w < 4; ++w) {
        const auto it = r.loss_history.begin() + 50 * w;
        CHECK(median({it, it + 50}) < median({it - 50, it}));
    }
    for (double v : field.params())
        REQUIRE(std::isfinite(v));
}

TEST_CASE("training is reproducible and independent of the thread count")
{
    TriMesh anchors = make_icosphere(2, 0.08);
    std::vector<TriMesh> meshes{anchors, anchors};
    std::vector<Frame> frames{grey_frame(0, 0.3), grey_frame(1, 0.6)};
    TrainConfig cfg;
    cfg.steps = 15;
    cfg.rays_per_step = 32;
    cfg.lr = 5e-3;
    cfg.sampling.n_samples = 12;
    cfg.seed = 2;
    auto run = [&](Exec exec, int threads) {
        set_num_threads(threads);
        RadianceField f = toy_field(static_cast<int>(anchors.num_vertices()), 2);
        auto hist = train_phase(f, meshes, frames, cfg, exec).loss_history;
        return std::make_pair(hist, std::vector<double>(f.params().begin(), f.params().end()));
    };
    const int saved = num_threads();
    auto a = run(Exec::Serial, 1);
    auto b = run(Exec::Parallel, 4);
    auto c = run(Exec::Parallel, 3);
    set_num_threads(saved);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(b.second == c.second);
    cfg.seed = 3;
    RadianceField f = toy_field(static_cast<int>(anchors.num_vertices()), 2);
    CHECK(train_phase(f, meshes, frames, cfg).loss_history != a.first);
}

TEST_CASE("training rejects bad inputs")
{
    TriMesh anchors = make_icosphere(2, 0.08);
    RadianceField field = toy_field(static_cast<int>(anchors.num_vertices()), 1);
    std::vector<TriMesh> meshes{anchors};
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.rays_per_step = 8;
    cfg.sampling.n_samples = 8;

    Frame nan = grey_frame(0, std::nan(""));
    std::vector<Frame> bad{nan};
    CHECK_THROWS_AS(train_phase(field, meshes, bad, cfg), Error);

    std::vector<Frame> frames{grey_frame(0, 0.5)};
    TrainConfig zero_lr = cfg;
    zero_lr.lr = 0.0;
    CHECK_THROWS_AS(train_phase(field, meshes, frames, zero_lr), Error);
    std::vector<TriMesh> none;
    CHECK_THROWS_AS(train_phase(field, none, frames, cfg), Error);
    std::vector<Frame> wrong_slot{grey_frame(1, 0.5)};
    CHECK_THROWS_AS(train_phase(field, meshes, wrong_slot, cfg), Error);
    Frame miss = grey_frame(0, 0.5);
    miss.camera = Camera::look_at(Vec3(0, 0, 0.4), Vec3(0, 0, 1), Vec3::UnitY(), 16, 16, 30.0);
    std::vector<Frame> away{miss};
    CHECK_THROWS_AS(train_phase(field, meshes, away, cfg), Error);

    TrainConfig zero = cfg;
    zero.steps = 0;
    RadianceField copy = field;
    CHECK(train_phase(copy, meshes, frames, zero).loss_history.empty());
    CHECK(std::equal(copy.params().begin(), copy.params().end(), field.params().begin()));
}

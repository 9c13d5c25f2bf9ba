#pragma once

#include "georefine/morphable.hpp"
#include "georefine/radiance_field.hpp"

#include <functional>

namespace georefine {

struct TrainConfig
{
    double lr = 5e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int rays_per_step = 1024;
    int steps = 2000;
    std::uint64_t seed = 0;
    SampleOptions sampling;
    // Rays of a step are split into this many fixed chunks whose gradients
    // are summed in order, so results do not depend on the thread count.
    int chunks = 16;

    void validate() const;
};

struct Frame
{
    Image target;
    Camera camera;
    HeadParams params;
    int index = 0; // embedding slot
};

/// One training ray with its target colour and stratification seed.
struct RayTarget
{
    Ray ray;
    Vec3 target = Vec3::Zero();
    std::uint64_t seed = 0;
};

/// Camera ray through pixel (x, y) clipped to a box; nullopt when it misses.
std::optional<Ray> clipped_pixel_ray(const Camera& camera, int x, int y, const Aabb& box);

/// Mean squared error over rays and colour channels of the field rendered
/// against the targets. When grad is non-empty it receives d(loss)/d(params)
/// (overwritten, full parameter length).
double ray_batch_loss(const RadianceField& field, const LatentDiffusion& diffusion, std::span<const RayTarget> rays,
                      int frame, const SampleOptions& sampling, std::span<double> grad, int chunks = 16,
                      Exec exec = Exec::Parallel);

struct TrainResult
{
    std::vector<double> loss_history;
};

using TrainCallback = std::function<void(int step, double loss)>;

/// Minibatch Adam on the photometric MSE. meshes[i] anchors the latent codes
/// for frames[i].
TrainResult train_phase(RadianceField& field, std::span<const TriMesh> meshes, std::span<const Frame> frames,
                        const TrainConfig& config, Exec exec = Exec::Parallel, const TrainCallback& callback = {});

struct GradientCheckResult
{
    double max_relative_error = 0.0;
    std::vector<std::size_t> indices;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

/// Central differences on a random parameter subset drawn evenly from the
/// density network, colour network, the frame's embedding and the vertex
/// codes. Relative error uses max(|a|, |b|, 1e-6) as denominator.
GradientCheckResult gradient_check(const RadianceField& field, const LatentDiffusion& diffusion,
                                   std::span<const RayTarget> rays, int frame, const SampleOptions& sampling,
                                   int num_params = 100, std::uint64_t seed = 0, double h = 1e-5);

} // namespace georefine

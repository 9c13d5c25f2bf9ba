#include "georefine/train.hpp"

#include <cmath>
#include <sstream>

namespace georefine {

void TrainConfig::validate() const
{
    if (!(lr > 0.0))
        throw Error("learning rate must be positive");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
        throw Error("Adam betas must lie in (0, 1)");
    if (!(adam_eps > 0.0))
        throw Error("Adam epsilon must be positive");
    if (rays_per_step < 1)
        throw Error("rays_per_step must be positive");
    if (steps < 0)
        throw Error("steps must be non-negative");
    if (sampling.n_samples < 2)
        throw Error("training needs at least two samples per ray");
    if (chunks < 1)
        throw Error("chunks must be positive");
}

std::optional<Ray> clipped_pixel_ray(const Camera& camera, int x, int y, const Aabb& box)
{
    Ray ray = camera.pixel_ray(x, y);
    auto span = intersect_box(ray.origin, ray.direction, box);
    if (!span)
        return std::nullopt;
    ray.t_near = std::max(0.0, span->first);
    ray.t_far = span->second;
    if (!(ray.t_far > ray.t_near))
        return std::nullopt;
    return ray;
}

namespace {

struct ChunkResult
{
    double loss = 0.0;
    std::vector<double> grad;
    std::vector<TrilinearStencil> stencils;
    std::vector<double> dlatent; // latent_dim per stencil
};

void process_chunk(const RadianceField& field, const LatentVolume& volume, std::span<const RayTarget> rays,
                   int frame, const SampleOptions& sampling, double grad_scale, bool want_grad, ChunkResult& out)
{
    const int n = sampling.n_samples;
    const int d = field.config().latent_dim;
    std::vector<double> t(n), delta(n), dsigma(n), trans(n);
    std::vector<Vec3> pts(n), drgb(n);
    SampleBatch batch;
    Eigen::MatrixXd dlat;
    if (want_grad)
        out.grad.assign(field.num_params(), 0.0);

    for (const RayTarget& rt : rays) {
        SplitMix64 rng(rt.seed);
        stratified_samples(rt.ray.t_near, rt.ray.t_far, n, sampling.stratified, rng, t, delta);
        for (int i = 0; i < n; ++i)
            pts[i] = rt.ray.at(t[i]);
        field.forward(volume, pts, rt.ray.direction, frame, batch);
        const Composite comp = composite(batch.sigma, delta, batch.rgb, sampling.background);
        const Vec3 err = comp.rgb - rt.target;
        out.loss += err.squaredNorm();
        if (!want_grad)
            continue;

        const Vec3 dc = grad_scale * 2.0 * err;
        // dC/dsigma_i = delta_i (T_{i+1} c_i - (C - S_i)), S_i the colour
        // accumulated up to and including sample i.
        double od = 0.0;
        Vec3 acc = Vec3::Zero();
        for (int i = 0; i < n; ++i) {
            od += batch.sigma[i] * delta[i];
            const double t_next = std::exp(-od);
            acc += comp.weights[i] * batch.rgb[i];
            dsigma[i] = delta[i] * dc.dot(t_next * batch.rgb[i] - (comp.rgb - acc));
            drgb[i] = comp.weights[i] * dc;
        }
        field.backward(batch, dsigma, drgb, out.grad, dlat);
        for (int i = 0; i < n; ++i) {
            if (!batch.inside[i])
                continue;
            out.stencils.push_back(batch.stencils[i]);
            out.dlatent.insert(out.dlatent.end(), dlat.col(i).data(), dlat.col(i).data() + d);
        }
    }
}

} // namespace

double ray_batch_loss(const RadianceField& field, const LatentDiffusion& diffusion, std::span<const RayTarget> rays,
                      int frame, const SampleOptions& sampling, std::span<double> grad, int chunks, Exec exec)
{
    if (rays.empty())
        throw Error("empty ray batch");
    if (chunks < 1)
        throw Error("chunks must be positive");
    const bool want_grad = !grad.empty();
    if (want_grad && grad.size() != field.num_params())
        throw Error("gradient buffer has the wrong size");
    const LatentVolume volume = field.latent_volume(diffusion, exec);
    const std::size_t b = rays.size();
    const int c_count = static_cast<int>(std::min<std::size_t>(chunks, b));
    const double scale = 1.0 / (3.0 * static_cast<double>(b));
    std::vector<ChunkResult> parts(c_count);

    auto run = [&](int c) {
        const std::size_t lo = b * c / c_count, hi = b * (c + 1) / c_count;
        process_chunk(field, volume, rays.subspan(lo, hi - lo), frame, sampling, scale, want_grad, parts[c]);
    };
    if (exec == Exec::Parallel) {
        std::string error;
#pragma omp parallel for schedule(dynamic, 1)
        for (int c = 0; c < c_count; ++c) {
            try {
                run(c);
            } catch (const std::exception& e) {
#pragma omp critical
                if (error.empty())
                    error = e.what();
            }
        }
        if (!error.empty())
            throw Error(error);
    } else {
        for (int c = 0; c < c_count; ++c)
            run(c);
    }

    double loss = 0.0;
    for (const ChunkResult& p : parts)
        loss += p.loss;
    loss *= scale;
    if (!want_grad)
        return loss;

    std::fill(grad.begin(), grad.end(), 0.0);
    for (const ChunkResult& p : parts)
        for (std::size_t i = 0; i < grad.size(); ++i)
            grad[i] += p.grad[i];

    const int d = field.config().latent_dim;
    std::vector<double> dvolume(volume.data.size(), 0.0);
    for (const ChunkResult& p : parts)
        for (std::size_t s = 0; s < p.stencils.size(); ++s) {
            const TrilinearStencil& st = p.stencils[s];
            const double* g = p.dlatent.data() + s * d;
            for (int k = 0; k < 8; ++k) {
                const double w = st.weight[k];
                if (w == 0.0)
                    continue;
                double* dst = dvolume.data() + static_cast<std::size_t>(st.index[k]) * d;
                for (int ch = 0; ch < d; ++ch)
                    dst[ch] += w * g[ch];
            }
        }
    diffusion.apply_transpose(dvolume, d, grad.subspan(field.code_offset()));
    return loss;
}

TrainResult train_phase(RadianceField& field, std::span<const TriMesh> meshes, std::span<const Frame> frames,
                        const TrainConfig& config, Exec exec, const TrainCallback& callback)
{
    config.validate();
    if (frames.empty())
        throw Error("training needs at least one frame");
    if (meshes.size() != frames.size())
        throw Error("training needs one mesh per frame (" + std::to_string(meshes.size()) + " meshes, " +
                    std::to_string(frames.size()) + " frames)");
    std::vector<LatentDiffusion> diffusions;
    diffusions.reserve(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const Frame& fr = frames[f];
        fr.camera.validate();
        if (fr.target.width != fr.camera.width || fr.target.height != fr.camera.height)
            throw Error("frame " + std::to_string(f) + ": target image does not match the camera size");
        if (fr.index < 0 || fr.index >= field.num_frames())
            throw Error("frame " + std::to_string(f) + ": embedding index out of range");
        diffusions.push_back(field.diffusion(meshes[f]));
    }

    const std::size_t np = field.num_params();
    std::vector<double> m(np, 0.0), v(np, 0.0), grad(np);
    std::vector<RayTarget> rays;
    TrainResult result;
    result.loss_history.reserve(config.steps);
    const Aabb box = field.grid().bounds;
    double b1t = 1.0, b2t = 1.0;

    for (int step = 0; step < config.steps; ++step) {
        SplitMix64 rng(hash_seed(config.seed, static_cast<std::uint64_t>(step)));
        const std::size_t f = std::min(frames.size() - 1, static_cast<std::size_t>(rng.uniform() * frames.size()));
        const Frame& fr = frames[f];
        const std::uint64_t pixels = static_cast<std::uint64_t>(fr.camera.width) * fr.camera.height;

        // Rays that miss the field volume only see the background and carry
        // no gradient, so the batch is drawn from pixels whose rays hit it.
        rays.clear();
        int attempts = 0;
        while (static_cast<int>(rays.size()) < config.rays_per_step && attempts < 20 * config.rays_per_step) {
            ++attempts;
            const std::uint64_t p = std::min(pixels - 1, static_cast<std::uint64_t>(rng.uniform() * pixels));
            const int x = static_cast<int>(p % fr.camera.width), y = static_cast<int>(p / fr.camera.width);
            auto ray = clipped_pixel_ray(fr.camera, x, y, box);
            if (!ray)
                continue;
            rays.push_back({*ray, Vec3(fr.target.at(x, y, 0), fr.target.at(x, y, 1), fr.target.at(x, y, 2)), rng()});
        }
        if (rays.empty())
            throw Error("frame " + std::to_string(f) + ": no camera ray intersects the field volume");

        const double loss =
            ray_batch_loss(field, diffusions[f], rays, fr.index, config.sampling, grad, config.chunks, exec);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "non-finite training loss at step " << step << " (frame " << f << ", " << rays.size()
                << " rays)";
            throw Error(msg.str());
        }
        for (std::size_t i = 0; i < np; ++i)
            if (!std::isfinite(grad[i]))
                throw Error("non-finite gradient at step " + std::to_string(step) + ", parameter " + std::to_string(i));
        result.loss_history.push_back(loss);

        b1t *= config.adam_beta1;
        b2t *= config.adam_beta2;
        auto params = field.params();
        for (std::size_t i = 0; i < np; ++i) {
            m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * grad[i];
            v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * grad[i] * grad[i];
            const double mh = m[i] / (1.0 - b1t);
            const double vh = v[i] / (1.0 - b2t);
            params[i] -= config.lr * mh / (std::sqrt(vh) + config.adam_eps);
        }
        if (callback)
            callback(step, loss);
    }
    return result;
}

GradientCheckResult gradient_check(const RadianceField& field, const LatentDiffusion& diffusion,
                                   std::span<const RayTarget> rays, int frame, const SampleOptions& sampling,
                                   int num_params, std::uint64_t seed, double h)
{
    GradientCheckResult out;
    std::vector<double> grad(field.num_params());
    ray_batch_loss(field, diffusion, rays, frame, sampling, grad);

    const int e = field.config().embed_dim;
    const std::size_t emb = field.embedding_offset() + static_cast<std::size_t>(std::max(frame, 0)) * e;
    const std::pair<std::size_t, std::size_t> groups[4] = {
        {field.sigma_offset(), field.color_offset()},
        {field.color_offset(), field.embedding_offset()},
        {emb, emb + e},
        {field.code_offset(), field.num_params()},
    };
    SplitMix64 rng(hash_seed(seed, 0x67726164));
    for (int i = 0; i < num_params; ++i) {
        auto [lo, hi] = groups[i % 4];
        if (hi <= lo)
            std::tie(lo, hi) = groups[3];
        out.indices.push_back(lo + std::min(hi - lo - 1, static_cast<std::size_t>(rng.uniform() * (hi - lo))));
    }

    RadianceField probe = field;
    for (std::size_t idx : out.indices) {
        const double orig = probe.params()[idx];
        probe.params()[idx] = orig + h;
        const double lp = ray_batch_loss(probe, diffusion, rays, frame, sampling, {});
        probe.params()[idx] = orig - h;
        const double lm = ray_batch_loss(probe, diffusion, rays, frame, sampling, {});
        probe.params()[idx] = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double analytic = grad[idx];
        out.analytic.push_back(analytic);
        out.numeric.push_back(numeric);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        out.max_relative_error = std::max(out.max_relative_error, std::abs(analytic - numeric) / denom);
    }
    return out;
}

} // namespace georefine

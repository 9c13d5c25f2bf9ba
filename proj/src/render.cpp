#include "georefine/render.hpp"

#include <cmath>
#include <numbers>

namespace georefine {

void positional_encoding(std::span<const double> x, int n_freq, double* out)
{
    const std::size_t d = x.size();
    for (std::size_t i = 0; i < d; ++i)
        out[i] = x[i];
    double* dst = out + d;
    double freq = std::numbers::pi;
    for (int l = 0; l < n_freq; ++l, freq *= 2.0) {
        for (std::size_t i = 0; i < d; ++i) {
            *dst++ = std::sin(freq * x[i]);
            *dst++ = std::cos(freq * x[i]);
        }
    }
}

std::vector<double> positional_encoding(std::span<const double> x, int n_freq)
{
    if (n_freq < 0)
        throw Error("positional encoding needs n_freq >= 0");
    std::vector<double> out(encoded_size(static_cast<int>(x.size()), n_freq));
    positional_encoding(x, n_freq, out.data());
    return out;
}

std::optional<std::pair<double, double>> intersect_box(const Vec3& origin, const Vec3& direction, const Aabb& box)
{
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (direction[a] == 0.0) {
            if (origin[a] < box.min[a] || origin[a] > box.max[a])
                return std::nullopt;
            continue;
        }
        double inv = 1.0 / direction[a];
        double lo = (box.min[a] - origin[a]) * inv;
        double hi = (box.max[a] - origin[a]) * inv;
        if (lo > hi)
            std::swap(lo, hi);
        t0 = std::max(t0, lo);
        t1 = std::min(t1, hi);
    }
    if (!(t0 < t1))
        return std::nullopt;
    return std::make_pair(t0, t1);
}

void Camera::validate() const
{
    if (!(fx > 0.0) || !(fy > 0.0))
        throw Error("camera focal lengths must be positive");
    if (width < 1 || height < 1)
        throw Error("camera image size must be positive");
    if (((rotation.transpose() * rotation) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-8)
        throw Error("camera rotation is not orthonormal");
}

Ray Camera::pixel_ray(int x, int y) const
{
    Vec3 d((x + 0.5 - cx) / fx, (y + 0.5 - cy) / fy, 1.0);
    Ray r;
    r.origin = position;
    r.direction = (rotation * d).normalized();
    r.t_near = 0.0;
    r.t_far = std::numeric_limits<double>::infinity();
    return r;
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, double focal)
{
    Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up).normalized();
    Vec3 down = forward.cross(right);
    Camera cam;
    cam.rotation.col(0) = right;
    cam.rotation.col(1) = down;
    cam.rotation.col(2) = forward;
    cam.position = eye;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.validate();
    return cam;
}

void stratified_samples(double t_near, double t_far, int n, bool stratified, SplitMix64& rng, std::span<double> t,
                        std::span<double> delta)
{
    const double step = (t_far - t_near) / n;
    for (int i = 0; i < n; ++i) {
        double u = stratified ? rng.uniform() : 0.5;
        t[i] = t_near + (i + u) * step;
    }
    for (int i = 0; i + 1 < n; ++i)
        delta[i] = t[i + 1] - t[i];
    delta[n - 1] = t_far - t[n - 1];
}

Composite composite(std::span<const double> sigma, std::span<const double> delta, std::span<const Vec3> rgb,
                    const Vec3& background)
{
    Composite out;
    out.weights.resize(sigma.size());
    double optical_depth = 0.0;
    double T = 1.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        optical_depth += sigma[i] * delta[i];
        double T_next = std::exp(-optical_depth);
        double w = T - T_next; // T_i (1 - exp(-sigma_i delta_i))
        out.weights[i] = w;
        out.rgb += w * rgb[i];
        T = T_next;
    }
    out.transmittance = T;
    out.rgb += T * background;
    return out;
}

RayResult render_ray(const RadianceSource& source, const Ray& ray, const SampleOptions& options, SplitMix64& rng)
{
    const int n = options.n_samples;
    if (n < 2)
        throw Error("render_ray needs at least two samples");
    std::vector<double> t(n), delta(n), sigma(n);
    std::vector<Vec3> pts(n), rgb(n);
    stratified_samples(ray.t_near, ray.t_far, n, options.stratified, rng, t, delta);
    for (int i = 0; i < n; ++i)
        pts[i] = ray.at(t[i]);
    source.evaluate(pts, ray.direction, sigma, rgb);
    Composite c = composite(sigma, delta, rgb, options.background);
    return {c.rgb, c.transmittance};
}

Image render_image(const RadianceSource& source, const Camera& camera, const RenderOptions& options, Exec exec)
{
    camera.validate();
    Image img(camera.width, camera.height);
    const Aabb box = source.bounds();
    const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(camera.width) * camera.height;
    auto pixel = [&](std::ptrdiff_t p) {
        const int x = static_cast<int>(p % camera.width);
        const int y = static_cast<int>(p / camera.width);
        Ray ray = camera.pixel_ray(x, y);
        Vec3 rgb = options.sampling.background;
        if (auto span = intersect_box(ray.origin, ray.direction, box)) {
            ray.t_near = std::max(0.0, span->first);
            ray.t_far = span->second;
            if (ray.t_far > ray.t_near) {
                SplitMix64 rng(hash_seed(options.seed, static_cast<std::uint64_t>(p)));
                rgb = render_ray(source, ray, options.sampling, rng).rgb;
            }
        }
        for (int c = 0; c < 3; ++c)
            img.at(x, y, c) = rgb[c];
    };
    if (exec == Exec::Serial) {
        for (std::ptrdiff_t p = 0; p < count; ++p)
            pixel(p);
    } else {
#pragma omp parallel for schedule(dynamic, 16)
        for (std::ptrdiff_t p = 0; p < count; ++p)
            pixel(p);
    }
    return img;
}

} // namespace georefine

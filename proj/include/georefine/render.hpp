#pragma once

#include "georefine/image.hpp"

#include <Eigen/Geometry>

#include <optional>
#include <span>
#include <vector>

namespace georefine {

/// NeRF positional encoding: [x, sin(2^0 pi x), cos(2^0 pi x), ...,
/// sin(2^(L-1) pi x), cos(2^(L-1) pi x)] per component.
std::vector<double> positional_encoding(std::span<const double> x, int n_freq);
void positional_encoding(std::span<const double> x, int n_freq, double* out);
inline constexpr int encoded_size(int dim, int n_freq) { return dim * (1 + 2 * n_freq); }

struct Ray
{
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ(); // unit length
    double t_near = 0.0;
    double t_far = 1.0;

    Vec3 at(double t) const { return origin + t * direction; }
};

/// Clips a ray's parameter range to a box; nullopt if they do not overlap.
std::optional<std::pair<double, double>> intersect_box(const Vec3& origin, const Vec3& direction, const Aabb& box);

/// Pinhole camera; rotation maps camera axes (x right, y down, z forward) to world.
struct Camera
{
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 1, height = 1;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 position = Vec3::Zero();

    void validate() const;
    /// Ray through the centre of pixel (x, y), unbounded range.
    Ray pixel_ray(int x, int y) const;

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, double focal);
};

/// Anything that can be volume rendered: density and colour at points seen
/// along a direction.
class RadianceSource
{
public:
    virtual ~RadianceSource() = default;
    virtual Aabb bounds() const = 0;
    virtual void evaluate(std::span<const Vec3> points, const Vec3& direction, std::span<double> sigma,
                          std::span<Vec3> rgb) const = 0;
};

struct SampleOptions
{
    int n_samples = 64;
    bool stratified = true; // false: midpoints of the strata
    Vec3 background = Vec3::Zero();
};

/// Sample depths t_i = t_near + (i + u_i) * (t_far - t_near) / n and spacings
/// delta_i = t_{i+1} - t_i with the last spacing running to t_far.
void stratified_samples(double t_near, double t_far, int n, bool stratified, SplitMix64& rng, std::span<double> t,
                        std::span<double> delta);

struct Composite
{
    Vec3 rgb = Vec3::Zero();
    double transmittance = 1.0; // after the last sample
    std::vector<double> weights; // T_i (1 - exp(-sigma_i delta_i))
};

/// Alpha compositing of sampled densities and colours, background added as T * bg.
Composite composite(std::span<const double> sigma, std::span<const double> delta, std::span<const Vec3> rgb,
                    const Vec3& background);

struct RayResult
{
    Vec3 rgb = Vec3::Zero();
    double transmittance = 1.0;
};

RayResult render_ray(const RadianceSource& source, const Ray& ray, const SampleOptions& options, SplitMix64& rng);

struct RenderOptions
{
    SampleOptions sampling;
    std::uint64_t seed = 0;
};

/// Renders every pixel; pixel p uses its own stream seeded from (seed, p), so
/// output does not depend on the execution policy or thread count.
Image render_image(const RadianceSource& source, const Camera& camera, const RenderOptions& options,
                   Exec exec = Exec::Parallel);

} // namespace georefine

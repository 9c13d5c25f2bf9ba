#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace georefine {

using Vec3 = Eigen::Vector3d;

/// Axis-aligned box. An empty box has min > max.
struct Aabb
{
    Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

    bool empty() const { return (min.array() > max.array()).any(); }
    Vec3 extent() const { return max - min; }
    Vec3 center() const { return 0.5 * (min + max); }
    double diagonal() const { return extent().norm(); }

    void expand(const Vec3& p)
    {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }

    bool contains(const Vec3& p) const
    {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }

    // Grows each side by `fraction` of the axis extent.
    Aabb dilated(double fraction) const
    {
        Vec3 pad = fraction * extent();
        return {min - pad, max + pad};
    }
};

/// Execution policy for kernels that have both a serial reference and an
/// OpenMP implementation. Both produce bitwise-identical results.
enum class Exec { Serial, Parallel };

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error
{
public:
    using Error::Error;
};

/// splitmix64: small counter-based generator used for per-ray and per-pixel
/// streams so results do not depend on scheduling.
class SplitMix64
{
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes two draws.
    double normal();

private:
    std::uint64_t state_;
};

/// Mixes a seed with a stream index into an independent seed.
std::uint64_t hash_seed(std::uint64_t seed, std::uint64_t stream);

/// Caps the OpenMP worker pool; n <= 0 restores the default.
void set_num_threads(int n);
int num_threads();

/// Warnings go through here so tests and the CLI can silence them.
void log_warning(const std::string& message);
void set_warnings_enabled(bool enabled);

} // namespace georefine

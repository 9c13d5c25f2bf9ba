#include "georefine/common.hpp"

#include <omp.h>

#include <atomic>
#include <cmath>
#include <iostream>
#include <numbers>

namespace georefine {

namespace {
std::atomic<bool> g_warnings{true};
}

double SplitMix64::normal()
{
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300)
        u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t hash_seed(std::uint64_t seed, std::uint64_t stream)
{
    SplitMix64 a(seed ^ 0x632be59bd9b4e019ULL);
    std::uint64_t h = a();
    SplitMix64 b(h + stream * 0x9e3779b97f4a7c15ULL);
    return b();
}

void set_num_threads(int n)
{
    if (n <= 0)
        n = omp_get_num_procs();
    omp_set_num_threads(n);
}

int num_threads() { return omp_get_max_threads(); }

void log_warning(const std::string& message)
{
    if (g_warnings.load())
        std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

} // namespace georefine

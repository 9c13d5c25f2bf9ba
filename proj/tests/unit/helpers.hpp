#pragma once

#include "georefine/mesh.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("georefine_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// (n+1) x (n+1) vertex grid in the z = 0 plane over [0, size]^2, optionally jittered.
inline georefine::TriMesh planar_grid(int n, double size = 1.0, double jitter = 0.0, unsigned seed = 1)
{
    georefine::TriMesh m;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double h = size / n;
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) {
            georefine::Vec3 p(i * h, j * h, 0.0);
            if (i > 0 && i < n && j > 0 && j < n) {
                p.x() += jitter * h * u(rng);
                p.y() += jitter * h * u(rng);
            }
            m.vertices.push_back(p);
        }
    auto id = [n](int i, int j) { return j * (n + 1) + i; };
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return m;
}

} // namespace testutil

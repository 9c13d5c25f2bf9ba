#pragma once

#include "georefine/mesh.hpp"

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace georefine {

/// Regular grid over a box. Nodes sit at cell centres and are stored
/// x-fastest: index = i + Rx * (j + Ry * k).
struct GridSpec
{
    std::array<int, 3> resolution{1, 1, 1};
    Aabb bounds;

    std::size_t num_cells() const
    {
        return static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2];
    }
    Vec3 cell_size() const
    {
        return bounds.extent().cwiseQuotient(Vec3(resolution[0], resolution[1], resolution[2]));
    }
    Vec3 node(int i, int j, int k) const
    {
        return bounds.min + (Vec3(i, j, k).array() + 0.5).matrix().cwiseProduct(cell_size());
    }
    std::size_t index(int i, int j, int k) const
    {
        return static_cast<std::size_t>(i) + resolution[0] * (static_cast<std::size_t>(j) + resolution[1] * static_cast<std::size_t>(k));
    }

    static GridSpec cube(int resolution, const Aabb& bounds) { return {{resolution, resolution, resolution}, bounds}; }
};

/// The eight (node, weight) pairs of a trilinear lookup. Inside the bounds
/// but beyond the outermost node centres the lookup clamps to the edge nodes.
struct TrilinearStencil
{
    std::array<std::uint32_t, 8> index{};
    std::array<double, 8> weight{};
};

/// Returns false (and leaves `out` untouched) when q lies outside the bounds.
bool trilinear_stencil(const GridSpec& grid, const Vec3& q, TrilinearStencil& out);

inline constexpr int kLatentDim = 16;

/// Per-vertex latent codes, one row per mesh vertex.
using LatentCodes = Eigen::MatrixXd;

/// Dense latent grid: channel values of one cell are contiguous.
struct LatentVolume
{
    GridSpec grid;
    int dim = kLatentDim;
    int blur_passes = 0;
    std::vector<double> data;

    const double* cell(std::size_t c) const { return data.data() + c * dim; }

    /// Trilinear interpolation; zero outside the bounds.
    Eigen::VectorXd query(const Vec3& q) const;
    void query(const Vec3& q, double* out) const;
};

/// Default latent bounds: the mesh bounding box grown by 15% of its extent on each side.
Aabb latent_bounds(const TriMesh& mesh);

/// Box: plain 3-tap blur with weights 1/3 and zero padding, so mass is
/// conserved and codes fade away from the surface.
/// Normalized: each blur divides by the blurred occupancy, so constants are
/// preserved over the support.
enum class BlurMode { Box, Normalized };

BlurMode parse_blur_mode(const std::string& name);
const char* blur_mode_name(BlurMode mode);

/// Linear map from vertex codes to the dense latent grid for one fixed mesh:
/// trilinear splat with per-cell weight normalisation, then `blur_passes`
/// rounds of separable 3-tap box blur. Geometry-only quantities are
/// precomputed, so the forward map and its adjoint are cheap.
class LatentDiffusion
{
public:
    LatentDiffusion(const TriMesh& mesh, const GridSpec& grid, int blur_passes, BlurMode mode = BlurMode::Box);

    const GridSpec& grid() const { return grid_; }
    int blur_passes() const { return blur_passes_; }
    BlurMode mode() const { return mode_; }
    std::size_t num_vertices() const { return splat_.size(); }

    LatentVolume apply(const LatentCodes& codes, Exec exec = Exec::Parallel) const;
    // Codes as a row-major N x dim buffer.
    LatentVolume apply(std::span<const double> codes, int dim, Exec exec = Exec::Parallel) const;

    /// Adjoint: accumulates d(loss)/d(codes) (row-major N x dim) from
    /// d(loss)/d(volume data).
    void apply_transpose(std::span<const double> dvolume, int dim, std::span<double> dcodes) const;

private:
    GridSpec grid_;
    int blur_passes_;
    BlurMode mode_;
    std::vector<TrilinearStencil> splat_;
    std::vector<double> inv_weight_;             // 1 / accumulated splat weight, 0 for empty cells
    std::vector<std::vector<std::uint8_t>> occupancy_; // per blur stage: neighbour counts
    std::vector<std::uint8_t> splat_mask_;
};

LatentVolume diffuse_latents(const LatentCodes& codes, const TriMesh& mesh, int resolution, int blur_passes,
                             std::optional<Aabb> bounds = std::nullopt, BlurMode mode = BlurMode::Box);

// --- densities ----------------------------------------------------------------

/// Scalar volume density sigma(q) >= 0, zero outside bounds().
class DensitySource
{
public:
    virtual ~DensitySource() = default;
    virtual Aabb bounds() const = 0;
    virtual double density(const Vec3& q) const = 0;
    virtual void density_batch(std::span<const Vec3> q, std::span<double> out) const;
};

struct Bump
{
    Vec3 direction = Vec3::UnitZ();
    double amplitude = 0.0;
    double sharpness = 1.0;
};

struct ShapePrimitive
{
    enum class Kind { Sphere, Ellipsoid, BumpySphere };
    Kind kind = Kind::Sphere;
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    Vec3 radii = Vec3::Ones();
    std::vector<Bump> bumps;

    // Signed distance (exact for spheres, first-order elsewhere).
    double sdf(const Vec3& q) const;
    // Surface radius along a unit direction; bumpy spheres only.
    double radius_along(const Vec3& unit) const;
    Aabb bounds() const;
};

struct ShapeSpec
{
    std::vector<ShapePrimitive> shapes;
    double sigma_max = 200.0;  // 1/m
    double softness = 0.005;   // m

    double sdf(const Vec3& q) const;
    Aabb bounds() const;

    static ShapeSpec sphere(double radius, const Vec3& center = Vec3::Zero());
};

/// sigma = sigma_max * sigmoid(-sdf / softness), zero outside the bounds.
double analytic_density(const ShapeSpec& spec, const Vec3& q);

class AnalyticDensity final : public DensitySource
{
public:
    explicit AnalyticDensity(ShapeSpec spec);
    Aabb bounds() const override { return bounds_; }
    double density(const Vec3& q) const override;
    const ShapeSpec& spec() const { return spec_; }

private:
    ShapeSpec spec_;
    Aabb bounds_;
};

/// Multi-channel f32 voxel grid as stored on disk.
struct VoxelGrid
{
    GridSpec grid;
    int channels = 1;
    std::vector<float> data; // channel-fastest, then x, y, z
};

VoxelGrid read_voxel_grid(const std::filesystem::path& path);
void write_voxel_grid(const std::filesystem::path& path, const VoxelGrid& grid);

/// Single-channel grid density, trilinear and clamped at zero.
class GridDensity final : public DensitySource
{
public:
    explicit GridDensity(VoxelGrid grid);
    Aabb bounds() const override { return grid_.grid.bounds; }
    double density(const Vec3& q) const override;
    const VoxelGrid& voxels() const { return grid_; }

private:
    VoxelGrid grid_;
};

double grid_density(const VoxelGrid& grid, const Vec3& q);

/// Samples a density at the node centres of `grid`.
VoxelGrid sample_density(const DensitySource& source, const GridSpec& grid, Exec exec = Exec::Parallel);

} // namespace georefine

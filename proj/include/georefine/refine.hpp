#pragma once

#include "georefine/bvh.hpp"
#include "georefine/field.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>

namespace georefine {

/// Rotation taking world coordinates to a frame whose +z is `frontal`.
Eigen::Matrix3d frontal_frame(const Vec3& frontal);

/// Depth map z = h(x, y) over a regular grid of cell centres, expressed in a
/// frontal frame (local = rotation * world). NaN marks columns without a
/// surface.
struct HeightField
{
    int rx = 0;
    int ry = 0;
    Aabb bounds; // local frame; x-y footprint plus the marched z range
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    std::vector<double> depth; // x-fastest

    double node_x(int i) const { return bounds.min.x() + (i + 0.5) * (bounds.max.x() - bounds.min.x()) / rx; }
    double node_y(int j) const { return bounds.min.y() + (j + 0.5) * (bounds.max.y() - bounds.min.y()) / ry; }
    double at(int i, int j) const { return depth[static_cast<std::size_t>(j) * rx + i]; }
    std::size_t valid_count() const;
};

struct HeightFieldOptions
{
    int rx = 256;
    int ry = 256;
    double tau = 0.5;        // transmittance threshold
    int z_samples = 512;     // marching steps over the z range
    Vec3 frontal = Vec3::UnitZ();
    std::optional<Aabb> region; // world box to cover; defaults to the density bounds
};

/// Marches every column from the front of the region towards the back,
/// integrating density with the trapezoid rule, and records where
/// transmittance first drops below tau.
HeightField extract_height_field(const DensitySource& density, const HeightFieldOptions& options,
                                 Exec exec = Exec::Parallel);

/// Single-channel voxel grid (rx x ry x 1) holding the depths.
VoxelGrid height_field_to_voxels(const HeightField& hf);
/// Triangulated surface in world coordinates.
TriMesh height_field_mesh(const HeightField& hf);

/// Signed distance to a triangulated height field: positive in front of the
/// surface (along the frontal axis), negative behind it.
class SdfSurface
{
public:
    explicit SdfSurface(HeightField hf);

    double operator()(const Vec3& p) const;
    double unsigned_distance(const Vec3& p) const;
    /// +1 in front of the surface, -1 otherwise.
    int side(const Vec3& p) const;

    const HeightField& height_field() const { return hf_; }
    const TriMesh& mesh() const { return bvh_.mesh(); }

private:
    HeightField hf_;
    TriangleBvh bvh_;
    std::vector<int> nearest_valid_; // per node: index of the closest non-NaN node
};

inline SdfSurface build_sdf(HeightField hf) { return SdfSurface(std::move(hf)); }

/// ReLU of the normal's alignment with the frontal axis.
double frontal_confidence(const Vec3& normal, const Vec3& frontal = Vec3::UnitZ());

struct PerturbConfig
{
    int samples = 32;
    double ray_extent = 0.03;
    std::optional<double> epsilon; // default: 1% of the mesh bounding-box diagonal
    Vec3 frontal = Vec3::UnitZ();

    void validate() const;
    double resolve_epsilon(const TriMesh& mesh) const;
};

/// Per-vertex displacement along the normal towards the SDF zero set. Each
/// vertex searches offsets t_m = a - m * (2a / M), m = 0..M-1, with
/// a = confidence * ray_extent, and keeps the first minimiser of |SDF|;
/// it stays put when that minimum exceeds epsilon.
Eigen::MatrixX3d perturb_vertices(const TriMesh& mesh, const SdfSurface& sdf, const PerturbConfig& config,
                                  Exec exec = Exec::Parallel);

/// CSV rows "kind,y,z" for template vertices, perturbed vertices and
/// height-field surface points within |x - x0| <= half_width.
void write_cross_section(std::ostream& out, const TriMesh& original, const TriMesh& perturbed, const HeightField& hf,
                         double x0, double half_width);

} // namespace georefine

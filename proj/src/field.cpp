#include "georefine/field.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace georefine {

bool trilinear_stencil(const GridSpec& grid, const Vec3& q, TrilinearStencil& out)
{
    if (!grid.bounds.contains(q))
        return false;
    std::array<int, 3> i0{};
    std::array<int, 3> i1{};
    std::array<double, 3> t{};
    const Vec3 h = grid.cell_size();
    for (int a = 0; a < 3; ++a) {
        const int r = grid.resolution[a];
        double f = (q[a] - grid.bounds.min[a]) / h[a] - 0.5;
        f = std::clamp(f, 0.0, static_cast<double>(r - 1));
        if (r == 1) {
            i0[a] = i1[a] = 0;
            t[a] = 0.0;
            continue;
        }
        int lo = std::min(static_cast<int>(std::floor(f)), r - 2);
        i0[a] = lo;
        i1[a] = lo + 1;
        t[a] = f - lo;
    }
    for (int c = 0; c < 8; ++c) {
        const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
        out.index[c] = static_cast<std::uint32_t>(grid.index(bx ? i1[0] : i0[0], by ? i1[1] : i0[1], bz ? i1[2] : i0[2]));
        out.weight[c] = (bx ? t[0] : 1.0 - t[0]) * (by ? t[1] : 1.0 - t[1]) * (bz ? t[2] : 1.0 - t[2]);
    }
    return true;
}

Eigen::VectorXd LatentVolume::query(const Vec3& q) const
{
    Eigen::VectorXd out(dim);
    query(q, out.data());
    return out;
}

void LatentVolume::query(const Vec3& q, double* out) const
{
    std::fill(out, out + dim, 0.0);
    TrilinearStencil s;
    if (!trilinear_stencil(grid, q, s))
        return;
    for (int c = 0; c < 8; ++c) {
        const double w = s.weight[c];
        if (w == 0.0)
            continue;
        const double* src = cell(s.index[c]);
        for (int k = 0; k < dim; ++k)
            out[k] += w * src[k];
    }
}

Aabb latent_bounds(const TriMesh& mesh) { return mesh.bounds().dilated(0.15); }

namespace {

// out[c] = in[c - step] + in[c] + in[c + step] along one axis, zero padded.
template <typename T, typename U>
void neighbor_sum(const T* in, U* out, const GridSpec& grid, int dim, int axis, Exec exec)
{
    const int rx = grid.resolution[0], ry = grid.resolution[1], rz = grid.resolution[2];
    const std::size_t stride = (axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(rx) : static_cast<std::size_t>(rx) * ry) * dim;
    const int len = grid.resolution[axis];
    auto slab = [&](int k) {
        for (int j = 0; j < ry; ++j)
            for (int i = 0; i < rx; ++i) {
                const int pos = axis == 0 ? i : axis == 1 ? j : k;
                const std::size_t base = grid.index(i, j, k) * dim;
                for (int ch = 0; ch < dim; ++ch) {
                    U acc = static_cast<U>(in[base + ch]);
                    if (pos > 0)
                        acc = static_cast<U>(in[base + ch - stride]) + acc;
                    if (pos + 1 < len)
                        acc = acc + static_cast<U>(in[base + ch + stride]);
                    out[base + ch] = acc;
                }
            }
    };
    if (exec == Exec::Serial) {
        for (int k = 0; k < rz; ++k)
            slab(k);
    } else {
#pragma omp parallel for schedule(static)
        for (int k = 0; k < rz; ++k)
            slab(k);
    }
}

} // namespace

BlurMode parse_blur_mode(const std::string& name)
{
    if (name == "box")
        return BlurMode::Box;
    if (name == "normalized")
        return BlurMode::Normalized;
    throw Error("unknown blur mode '" + name + "' (expected box or normalized)");
}

const char* blur_mode_name(BlurMode mode) { return mode == BlurMode::Box ? "box" : "normalized"; }

LatentDiffusion::LatentDiffusion(const TriMesh& mesh, const GridSpec& grid, int blur_passes, BlurMode mode)
    : grid_(grid), blur_passes_(blur_passes), mode_(mode)
{
    if (blur_passes < 0)
        throw Error("blur_passes must be non-negative");
    const std::size_t cells = grid.num_cells();
    std::vector<double> weight(cells, 0.0);
    splat_.resize(mesh.vertices.size());
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const Vec3& p = mesh.vertices[v];
        if (!trilinear_stencil(grid, p, splat_[v])) {
            std::ostringstream msg;
            msg << "vertex " << v << " at (" << p.x() << ", " << p.y() << ", " << p.z()
                << ") lies outside the latent volume bounds";
            throw Error(msg.str());
        }
        for (int c = 0; c < 8; ++c)
            weight[splat_[v].index[c]] += splat_[v].weight[c];
    }
    inv_weight_.resize(cells);
    splat_mask_.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        splat_mask_[c] = weight[c] > 0.0;
        inv_weight_[c] = weight[c] > 0.0 ? 1.0 / weight[c] : 0.0;
    }

    if (mode_ == BlurMode::Box)
        return;
    std::vector<std::uint8_t> mask = splat_mask_;
    for (int pass = 0; pass < blur_passes; ++pass)
        for (int axis = 0; axis < 3; ++axis) {
            std::vector<std::uint8_t> count(cells);
            neighbor_sum(mask.data(), count.data(), grid, 1, axis, Exec::Serial);
            for (std::size_t c = 0; c < cells; ++c)
                mask[c] = count[c] > 0;
            occupancy_.push_back(std::move(count));
        }
}

LatentVolume LatentDiffusion::apply(const LatentCodes& codes, Exec exec) const
{
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = codes;
    return apply(std::span<const double>(rows.data(), static_cast<std::size_t>(rows.size())),
                 static_cast<int>(codes.cols()), exec);
}

LatentVolume LatentDiffusion::apply(std::span<const double> codes, int dim, Exec exec) const
{
    if (dim <= 0 || codes.size() != splat_.size() * static_cast<std::size_t>(dim))
        throw Error("latent code count does not match the mesh vertex count");
    const std::size_t cells = grid_.num_cells();

    LatentVolume vol;
    vol.grid = grid_;
    vol.dim = dim;
    vol.blur_passes = blur_passes_;
    vol.data.assign(cells * dim, 0.0);

    for (std::size_t v = 0; v < splat_.size(); ++v) {
        const double* z = codes.data() + v * dim;
        for (int c = 0; c < 8; ++c) {
            const double w = splat_[v].weight[c];
            if (w == 0.0)
                continue;
            double* dst = vol.data.data() + static_cast<std::size_t>(splat_[v].index[c]) * dim;
            for (int k = 0; k < dim; ++k)
                dst[k] += w * z[k];
        }
    }
    for (std::size_t c = 0; c < cells; ++c)
        for (int k = 0; k < dim; ++k)
            vol.data[c * dim + k] *= inv_weight_[c];

    std::vector<double> sums(vol.data.size());
    if (mode_ == BlurMode::Box) {
        for (int stage = 0; stage < 3 * blur_passes_; ++stage) {
            neighbor_sum(vol.data.data(), sums.data(), grid_, dim, stage % 3, exec);
            for (std::size_t i = 0; i < sums.size(); ++i)
                vol.data[i] = sums[i] / 3.0;
        }
        return vol;
    }
    for (std::size_t stage = 0; stage < occupancy_.size(); ++stage) {
        const int axis = static_cast<int>(stage % 3);
        neighbor_sum(vol.data.data(), sums.data(), grid_, dim, axis, exec);
        const auto& count = occupancy_[stage];
        for (std::size_t c = 0; c < cells; ++c) {
            const double inv = count[c] > 0 ? 1.0 / count[c] : 0.0;
            for (int k = 0; k < dim; ++k)
                vol.data[c * dim + k] = count[c] > 0 ? sums[c * dim + k] * inv : 0.0;
        }
    }
    return vol;
}

void LatentDiffusion::apply_transpose(std::span<const double> dvolume, int dim, std::span<double> dcodes) const
{
    const std::size_t cells = grid_.num_cells();
    if (dvolume.size() != cells * dim || dcodes.size() != splat_.size() * static_cast<std::size_t>(dim))
        throw Error("latent gradient size mismatch");
    std::vector<double> g(dvolume.begin(), dvolume.end());
    std::vector<double> sums(g.size());
    if (mode_ == BlurMode::Box) {
        // the zero-padded 3-tap sum is symmetric
        for (int stage = 3 * blur_passes_; stage-- > 0;) {
            neighbor_sum(g.data(), sums.data(), grid_, dim, stage % 3, Exec::Parallel);
            for (std::size_t i = 0; i < sums.size(); ++i)
                g[i] = sums[i] / 3.0;
        }
    }
    for (std::size_t stage = occupancy_.size(); stage-- > 0;) {
        const int axis = static_cast<int>(stage % 3);
        const auto& count = occupancy_[stage];
        for (std::size_t c = 0; c < cells; ++c) {
            const double inv = count[c] > 0 ? 1.0 / count[c] : 0.0;
            for (int k = 0; k < dim; ++k)
                g[c * dim + k] = count[c] > 0 ? g[c * dim + k] * inv : 0.0;
        }
        neighbor_sum(g.data(), sums.data(), grid_, dim, axis, Exec::Parallel);
        const std::vector<std::uint8_t>& mask_in = stage == 0 ? splat_mask_ : occupancy_[stage - 1];
        for (std::size_t c = 0; c < cells; ++c)
            for (int k = 0; k < dim; ++k)
                g[c * dim + k] = mask_in[c] > 0 ? sums[c * dim + k] : 0.0;
    }
    for (std::size_t c = 0; c < cells; ++c)
        for (int k = 0; k < dim; ++k)
            g[c * dim + k] *= inv_weight_[c];
    for (std::size_t v = 0; v < splat_.size(); ++v)
        for (int c = 0; c < 8; ++c) {
            const double w = splat_[v].weight[c];
            if (w == 0.0)
                continue;
            const double* src = g.data() + static_cast<std::size_t>(splat_[v].index[c]) * dim;
            for (int k = 0; k < dim; ++k)
                dcodes[v * dim + k] += w * src[k];
        }
}

LatentVolume diffuse_latents(const LatentCodes& codes, const TriMesh& mesh, int resolution, int blur_passes,
                             std::optional<Aabb> bounds, BlurMode mode)
{
    if (resolution < 16 || resolution > 256)
        throw Error("latent resolution must lie in [16, 256]");
    GridSpec grid = GridSpec::cube(resolution, bounds.value_or(latent_bounds(mesh)));
    return LatentDiffusion(mesh, grid, blur_passes, mode).apply(codes);
}

// --- densities ----------------------------------------------------------------

void DensitySource::density_batch(std::span<const Vec3> q, std::span<double> out) const
{
    for (std::size_t i = 0; i < q.size(); ++i)
        out[i] = density(q[i]);
}

double ShapePrimitive::radius_along(const Vec3& unit) const
{
    double r = radius;
    for (const Bump& b : bumps)
        r += b.amplitude * std::exp(b.sharpness * (unit.dot(b.direction) - 1.0));
    return r;
}

double ShapePrimitive::sdf(const Vec3& q) const
{
    const Vec3 d = q - center;
    switch (kind) {
    case Kind::Sphere:
        return d.norm() - radius;
    case Kind::Ellipsoid: {
        double k = d.cwiseQuotient(radii).norm();
        return (k - 1.0) * radii.minCoeff();
    }
    case Kind::BumpySphere: {
        double n = d.norm();
        if (n == 0.0)
            return -radius;
        return n - radius_along(d / n);
    }
    }
    return 0.0;
}

Aabb ShapePrimitive::bounds() const
{
    Vec3 half;
    switch (kind) {
    case Kind::Sphere:
        half = Vec3::Constant(radius);
        break;
    case Kind::Ellipsoid:
        half = radii;
        break;
    case Kind::BumpySphere: {
        double r = radius;
        for (const Bump& b : bumps)
            r += std::max(0.0, b.amplitude);
        half = Vec3::Constant(r);
        break;
    }
    }
    return {center - half, center + half};
}

double ShapeSpec::sdf(const Vec3& q) const
{
    double s = std::numeric_limits<double>::infinity();
    for (const ShapePrimitive& p : shapes)
        s = std::min(s, p.sdf(q));
    return s;
}

Aabb ShapeSpec::bounds() const
{
    Aabb box;
    for (const ShapePrimitive& p : shapes) {
        Aabb b = p.bounds();
        box.expand(b.min);
        box.expand(b.max);
    }
    // sigmoid(-20) ~ 2e-9: the density is negligible beyond this pad.
    Vec3 pad = Vec3::Constant(20.0 * softness);
    return {box.min - pad, box.max + pad};
}

ShapeSpec ShapeSpec::sphere(double radius, const Vec3& center)
{
    ShapeSpec spec;
    ShapePrimitive p;
    p.kind = ShapePrimitive::Kind::Sphere;
    p.center = center;
    p.radius = radius;
    spec.shapes.push_back(p);
    return spec;
}

namespace {

double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double analytic_density_in_bounds(const ShapeSpec& spec, const Aabb& bounds, const Vec3& q)
{
    if (!bounds.contains(q))
        return 0.0;
    return spec.sigma_max * sigmoid(-spec.sdf(q) / spec.softness);
}

} // namespace

double analytic_density(const ShapeSpec& spec, const Vec3& q)
{
    return analytic_density_in_bounds(spec, spec.bounds(), q);
}

AnalyticDensity::AnalyticDensity(ShapeSpec spec) : spec_(std::move(spec)), bounds_(spec_.bounds())
{
    if (spec_.shapes.empty())
        throw Error("analytic density needs at least one shape");
    if (!(spec_.softness > 0.0) || !(spec_.sigma_max >= 0.0))
        throw Error("analytic density needs softness > 0 and sigma_max >= 0");
}

double AnalyticDensity::density(const Vec3& q) const { return analytic_density_in_bounds(spec_, bounds_, q); }

double grid_density(const VoxelGrid& grid, const Vec3& q)
{
    TrilinearStencil s;
    if (!trilinear_stencil(grid.grid, q, s))
        return 0.0;
    double acc = 0.0;
    for (int c = 0; c < 8; ++c)
        if (s.weight[c] != 0.0)
            acc += s.weight[c] * grid.data[static_cast<std::size_t>(s.index[c]) * grid.channels];
    if (!std::isfinite(acc))
        return 0.0;
    return std::max(acc, 0.0);
}

GridDensity::GridDensity(VoxelGrid grid) : grid_(std::move(grid))
{
    if (grid_.data.size() != grid_.grid.num_cells() * grid_.channels)
        throw Error("voxel grid data size does not match its header");
}

double GridDensity::density(const Vec3& q) const { return grid_density(grid_, q); }

VoxelGrid sample_density(const DensitySource& source, const GridSpec& grid, Exec exec)
{
    VoxelGrid out;
    out.grid = grid;
    out.channels = 1;
    out.data.resize(grid.num_cells());
    const int rx = grid.resolution[0], ry = grid.resolution[1], rz = grid.resolution[2];
    auto slab = [&](int k) {
        for (int j = 0; j < ry; ++j)
            for (int i = 0; i < rx; ++i)
                out.data[grid.index(i, j, k)] = static_cast<float>(source.density(grid.node(i, j, k)));
    };
    if (exec == Exec::Serial) {
        for (int k = 0; k < rz; ++k)
            slab(k);
    } else {
#pragma omp parallel for schedule(static)
        for (int k = 0; k < rz; ++k)
            slab(k);
    }
    return out;
}

} // namespace georefine

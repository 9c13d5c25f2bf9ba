#include "georefine/refine.hpp"

#include <cmath>
#include <deque>
#include <iomanip>
#include <ostream>

namespace georefine {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Continuous node coordinate of a local position; node centres sit at integers.
double node_coord(double v, double lo, double hi, int n) { return (v - lo) / ((hi - lo) / n) - 0.5; }

} // namespace

Eigen::Matrix3d frontal_frame(const Vec3& frontal)
{
    const double len = frontal.norm();
    if (!(len > 0.0) || !std::isfinite(len))
        throw Error("frontal axis must be a non-zero finite vector");
    const Vec3 z = frontal / len;
    if ((z - Vec3::UnitZ()).norm() < 1e-15)
        return Eigen::Matrix3d::Identity();
    // Seed the x axis with the world axis least aligned with z.
    Eigen::Index axis = 0;
    z.cwiseAbs().minCoeff(&axis);
    Vec3 seed = Vec3::Zero();
    seed[axis] = 1.0;
    const Vec3 x = (seed - seed.dot(z) * z).normalized();
    const Vec3 y = z.cross(x);
    Eigen::Matrix3d r;
    r.row(0) = x.transpose();
    r.row(1) = y.transpose();
    r.row(2) = z.transpose();
    return r;
}

std::size_t HeightField::valid_count() const
{
    std::size_t n = 0;
    for (double d : depth)
        n += !std::isnan(d);
    return n;
}

HeightField extract_height_field(const DensitySource& density, const HeightFieldOptions& options, Exec exec)
{
    if (options.rx < 1 || options.ry < 1)
        throw Error("height-field resolution must be positive");
    if (!(options.tau > 0.0 && options.tau < 1.0))
        throw Error("transmittance threshold must lie in (0, 1)");
    if (options.z_samples < 1)
        throw Error("height-field marching needs at least one step");

    HeightField hf;
    hf.rx = options.rx;
    hf.ry = options.ry;
    hf.rotation = frontal_frame(options.frontal);
    const Aabb region = options.region.value_or(density.bounds());
    if (region.empty())
        throw Error("height-field region is empty");
    for (int c = 0; c < 8; ++c) {
        Vec3 corner((c & 1) ? region.max.x() : region.min.x(), (c & 2) ? region.max.y() : region.min.y(),
                    (c & 4) ? region.max.z() : region.min.z());
        hf.bounds.expand(hf.rotation * corner);
    }
    hf.depth.assign(static_cast<std::size_t>(hf.rx) * hf.ry, kNaN);

    const int steps = options.z_samples;
    const double z_top = hf.bounds.max.z();
    const double dz = (hf.bounds.max.z() - hf.bounds.min.z()) / steps;
    const Eigen::Matrix3d to_world = hf.rotation.transpose();
    const double log_tau = std::log(options.tau);

    auto column = [&](std::size_t c) {
        const int i = static_cast<int>(c % hf.rx);
        const int j = static_cast<int>(c / hf.rx);
        std::vector<Vec3> pts(steps + 1);
        std::vector<double> sigma(steps + 1);
        for (int m = 0; m <= steps; ++m)
            pts[m] = to_world * Vec3(hf.node_x(i), hf.node_y(j), z_top - m * dz);
        density.density_batch(pts, sigma);
        // Work in optical depth: T < tau  <=>  depth > -log(tau).
        const double limit = -log_tau;
        double od = 0.0;
        for (int m = 1; m <= steps; ++m) {
            const double next = od + 0.5 * (sigma[m - 1] + sigma[m]) * dz;
            if (next > limit) {
                const double t_prev = std::exp(-od);
                const double t_next = std::exp(-next);
                const double frac = (t_prev - options.tau) / (t_prev - t_next);
                hf.depth[c] = z_top - (m - 1 + frac) * dz;
                return;
            }
            od = next;
        }
    };

    const std::size_t columns = hf.depth.size();
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 16)
        for (std::size_t c = 0; c < columns; ++c)
            column(c);
    } else {
        for (std::size_t c = 0; c < columns; ++c)
            column(c);
    }
    return hf;
}

VoxelGrid height_field_to_voxels(const HeightField& hf)
{
    VoxelGrid vg;
    vg.grid = GridSpec{{hf.rx, hf.ry, 1}, hf.bounds};
    vg.channels = 1;
    vg.data.resize(hf.depth.size());
    for (std::size_t i = 0; i < hf.depth.size(); ++i)
        vg.data[i] = static_cast<float>(hf.depth[i]);
    return vg;
}

TriMesh height_field_mesh(const HeightField& hf)
{
    TriMesh mesh;
    std::vector<int> vid(hf.depth.size(), -1);
    const Eigen::Matrix3d to_world = hf.rotation.transpose();
    for (int j = 0; j < hf.ry; ++j)
        for (int i = 0; i < hf.rx; ++i) {
            const double h = hf.at(i, j);
            if (std::isnan(h))
                continue;
            vid[static_cast<std::size_t>(j) * hf.rx + i] = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(to_world * Vec3(hf.node_x(i), hf.node_y(j), h));
        }
    auto id = [&](int i, int j) { return vid[static_cast<std::size_t>(j) * hf.rx + i]; };
    for (int j = 0; j + 1 < hf.ry; ++j)
        for (int i = 0; i + 1 < hf.rx; ++i) {
            const int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
            if (a >= 0 && b >= 0 && c >= 0)
                mesh.faces.push_back({a, b, c});
            if (a >= 0 && c >= 0 && d >= 0)
                mesh.faces.push_back({a, c, d});
        }
    return mesh;
}

SdfSurface::SdfSurface(HeightField hf) : hf_(std::move(hf))
{
    if (hf_.depth.size() != static_cast<std::size_t>(hf_.rx) * hf_.ry)
        throw Error("height field storage does not match its resolution");
    if (hf_.valid_count() == 0)
        throw Error("height field is empty: no column reached the transmittance threshold");
    TriMesh mesh = height_field_mesh(hf_);
    if (mesh.faces.empty())
        throw Error("height field has no complete cells to triangulate");
    bvh_ = TriangleBvh(std::move(mesh));

    // Multi-source breadth-first search from every valid node.
    nearest_valid_.assign(hf_.depth.size(), -1);
    std::deque<int> queue;
    for (std::size_t n = 0; n < hf_.depth.size(); ++n)
        if (!std::isnan(hf_.depth[n])) {
            nearest_valid_[n] = static_cast<int>(n);
            queue.push_back(static_cast<int>(n));
        }
    while (!queue.empty()) {
        const int n = queue.front();
        queue.pop_front();
        const int i = n % hf_.rx, j = n / hf_.rx;
        const int nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
        for (const auto& q : nb) {
            if (q[0] < 0 || q[0] >= hf_.rx || q[1] < 0 || q[1] >= hf_.ry)
                continue;
            const int m = q[1] * hf_.rx + q[0];
            if (nearest_valid_[m] < 0) {
                nearest_valid_[m] = nearest_valid_[n];
                queue.push_back(m);
            }
        }
    }
}

double SdfSurface::unsigned_distance(const Vec3& p) const { return bvh_.closest(p).distance; }

int SdfSurface::side(const Vec3& p) const
{
    const Vec3 local = hf_.rotation * p;
    const double fx = node_coord(local.x(), hf_.bounds.min.x(), hf_.bounds.max.x(), hf_.rx);
    const double fy = node_coord(local.y(), hf_.bounds.min.y(), hf_.bounds.max.y(), hf_.ry);
    double h = kNaN;
    if (fx >= 0.0 && fy >= 0.0 && fx <= hf_.rx - 1 && fy <= hf_.ry - 1) {
        const int i0 = hf_.rx > 1 ? std::min(static_cast<int>(fx), hf_.rx - 2) : 0;
        const int j0 = hf_.ry > 1 ? std::min(static_cast<int>(fy), hf_.ry - 2) : 0;
        const int i1 = std::min(i0 + 1, hf_.rx - 1), j1 = std::min(j0 + 1, hf_.ry - 1);
        const double tx = fx - i0, ty = fy - j0;
        h = (1 - tx) * (1 - ty) * hf_.at(i0, j0) + tx * (1 - ty) * hf_.at(i1, j0) + (1 - tx) * ty * hf_.at(i0, j1) +
            tx * ty * hf_.at(i1, j1);
    }
    if (std::isnan(h)) {
        const int i = std::clamp(static_cast<int>(std::lround(fx)), 0, hf_.rx - 1);
        const int j = std::clamp(static_cast<int>(std::lround(fy)), 0, hf_.ry - 1);
        h = hf_.depth[nearest_valid_[static_cast<std::size_t>(j) * hf_.rx + i]];
    }
    return local.z() > h ? 1 : -1;
}

double SdfSurface::operator()(const Vec3& p) const { return side(p) * unsigned_distance(p); }

double frontal_confidence(const Vec3& normal, const Vec3& frontal) { return std::max(0.0, normal.dot(frontal)); }

void PerturbConfig::validate() const
{
    if (samples < 2)
        throw Error("perturbation needs at least 2 samples per ray");
    if (!(ray_extent >= 0.0))
        throw Error("perturbation ray extent must be non-negative");
    if (epsilon && !(*epsilon > 0.0))
        throw Error("perturbation epsilon must be positive");
    if (!(std::abs(frontal.norm() - 1.0) < 1e-9))
        throw Error("frontal axis must be a unit vector");
}

double PerturbConfig::resolve_epsilon(const TriMesh& mesh) const
{
    return epsilon ? *epsilon : 0.01 * mesh.bounds().diagonal();
}

Eigen::MatrixX3d perturb_vertices(const TriMesh& mesh, const SdfSurface& sdf, const PerturbConfig& config, Exec exec)
{
    config.validate();
    const double eps = config.resolve_epsilon(mesh);
    const std::vector<Vec3> normals = vertex_normals(mesh, exec);
    const Eigen::Index n = static_cast<Eigen::Index>(mesh.vertices.size());
    Eigen::MatrixX3d disp = Eigen::MatrixX3d::Zero(n, 3);

    auto vertex = [&](Eigen::Index v) {
        const Vec3& nv = normals[v];
        const double conf = frontal_confidence(nv, config.frontal);
        if (conf == 0.0)
            return;
        const double a = conf * config.ray_extent;
        const double step = 2.0 * a / config.samples;
        double best = std::numeric_limits<double>::infinity();
        double best_t = 0.0;
        for (int m = 0; m < config.samples; ++m) {
            const double t = a - m * step;
            const double s = std::abs(sdf(mesh.vertices[v] + t * nv));
            if (s < best) {
                best = s;
                best_t = t;
            }
        }
        if (best > eps)
            return;
        disp.row(v) = (best_t * nv).transpose();
    };

    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 32)
        for (Eigen::Index v = 0; v < n; ++v)
            vertex(v);
    } else {
        for (Eigen::Index v = 0; v < n; ++v)
            vertex(v);
    }
    return disp;
}

void write_cross_section(std::ostream& out, const TriMesh& original, const TriMesh& perturbed, const HeightField& hf,
                         double x0, double half_width)
{
    out << std::setprecision(17) << "kind,y,z\n";
    auto emit = [&](const char* kind, const TriMesh& m) {
        for (const Vec3& p : m.vertices)
            if (std::abs(p.x() - x0) <= half_width)
                out << kind << ',' << p.y() << ',' << p.z() << '\n';
    };
    emit("template", original);
    emit("perturbed", perturbed);
    const Eigen::Matrix3d to_world = hf.rotation.transpose();
    for (int j = 0; j < hf.ry; ++j)
        for (int i = 0; i < hf.rx; ++i) {
            const double h = hf.at(i, j);
            if (std::isnan(h))
                continue;
            const Vec3 p = to_world * Vec3(hf.node_x(i), hf.node_y(j), h);
            if (std::abs(p.x() - x0) <= half_width)
                out << "surface," << p.y() << ',' << p.z() << '\n';
        }
}

} // namespace georefine

#include "georefine/mesh.hpp"
#include "georefine/bvh.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace georefine {

Aabb TriMesh::bounds() const
{
    Aabb box;
    for (const Vec3& v : vertices)
        box.expand(v);
    return box;
}

namespace {

std::uint64_t edge_key(int a, int b)
{
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

} // namespace

void TriMesh::validate() const
{
    const int n = static_cast<int>(vertices.size());
    std::vector<std::uint64_t> directed;
    directed.reserve(faces.size() * 3);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Face& face = faces[f];
        for (int k = 0; k < 3; ++k) {
            if (face[k] < 0 || face[k] >= n)
                throw Error("face " + std::to_string(f) + " references vertex " + std::to_string(face[k]) +
                            " but the mesh has " + std::to_string(n) + " vertices");
        }
        if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
            throw Error("face " + std::to_string(f) + " repeats a vertex index");
        for (int k = 0; k < 3; ++k)
            directed.push_back(edge_key(face[k], face[(k + 1) % 3]));
    }
    std::sort(directed.begin(), directed.end());
    auto dup = std::adjacent_find(directed.begin(), directed.end());
    if (dup != directed.end())
        throw Error("directed edge (" + std::to_string(*dup >> 32) + ", " + std::to_string(*dup & 0xffffffffu) +
                    ") appears twice: inconsistent winding or non-manifold edge");
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh, Exec exec)
{
    const std::size_t nv = mesh.vertices.size();
    const std::size_t nf = mesh.faces.size();

    std::vector<Vec3> face_normals(nf);
    auto face_normal = [&](std::size_t f) {
        const Face& t = mesh.faces[f];
        const Vec3& a = mesh.vertices[t[0]];
        return Vec3((mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a));
    };

    std::vector<Vec3> normals(nv, Vec3::Zero());
    std::vector<int> valence(nv, 0);

    if (exec == Exec::Serial) {
        for (std::size_t f = 0; f < nf; ++f) {
            Vec3 n = face_normal(f);
            for (int v : mesh.faces[f]) {
                normals[v] += n;
                ++valence[v];
            }
        }
    } else {
        // Vertex-to-face adjacency in ascending face order keeps the per-vertex
        // summation order identical to the serial loop.
        std::vector<int> offsets(nv + 1, 0);
        for (const Face& t : mesh.faces)
            for (int v : t)
                ++offsets[v + 1];
        for (std::size_t v = 0; v < nv; ++v)
            offsets[v + 1] += offsets[v];
        std::vector<int> incident(offsets.back());
        std::vector<int> cursor(offsets.begin(), offsets.end() - 1);
        for (std::size_t f = 0; f < nf; ++f)
            for (int v : mesh.faces[f])
                incident[cursor[v]++] = static_cast<int>(f);

#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(nf); ++f)
            face_normals[f] = face_normal(static_cast<std::size_t>(f));

#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(nv); ++v) {
            Vec3 acc = Vec3::Zero();
            for (int k = offsets[v]; k < offsets[v + 1]; ++k)
                acc += face_normals[incident[k]];
            normals[v] = acc;
            valence[v] = offsets[v + 1] - offsets[v];
        }
    }

    std::size_t isolated = 0;
    for (std::size_t v = 0; v < nv; ++v) {
        double len = normals[v].norm();
        if (valence[v] == 0)
            ++isolated;
        if (len > 0.0)
            normals[v] /= len;
        else
            normals[v].setZero();
    }
    if (isolated > 0)
        log_warning(std::to_string(isolated) + " isolated vertices have no normal");
    return normals;
}

// --- SparseMatrix -----------------------------------------------------------

SparseMatrix SparseMatrix::from_triplets(int dimension, std::span<const Triplet> triplets)
{
    SparseMatrix m;
    m.dim_ = dimension;
    std::vector<std::size_t> order(triplets.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Triplet& t = triplets[i];
        if (t.row < 0 || t.row >= dimension || t.col < 0 || t.col >= dimension)
            throw Error("sparse triplet out of range");
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Triplet& x = triplets[a];
        const Triplet& y = triplets[b];
        return x.row != y.row ? x.row < y.row : x.col < y.col;
    });

    m.row_ptr_.assign(dimension + 1, 0);
    int last_row = -1;
    int last_col = -1;
    for (std::size_t idx : order) {
        const Triplet& t = triplets[idx];
        if (t.row == last_row && t.col == last_col) {
            m.values_.back() += t.value;
            continue;
        }
        m.cols_.push_back(t.col);
        m.values_.push_back(t.value);
        ++m.row_ptr_[t.row + 1];
        last_row = t.row;
        last_col = t.col;
    }
    for (int r = 0; r < dimension; ++r)
        m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
}

SparseMatrix SparseMatrix::identity(int dimension)
{
    std::vector<Triplet> t;
    t.reserve(dimension);
    for (int i = 0; i < dimension; ++i)
        t.push_back({i, i, 1.0});
    return from_triplets(dimension, t);
}

double SparseMatrix::coeff(int row, int col) const
{
    auto cols = row_columns(row);
    auto it = std::lower_bound(cols.begin(), cols.end(), col);
    if (it == cols.end() || *it != col)
        return 0.0;
    return values_[row_ptr_[row] + (it - cols.begin())];
}

std::span<const int> SparseMatrix::row_columns(int row) const
{
    return {cols_.data() + row_ptr_[row], static_cast<std::size_t>(row_ptr_[row + 1] - row_ptr_[row])};
}

std::span<const double> SparseMatrix::row_values(int row) const
{
    return {values_.data() + row_ptr_[row], static_cast<std::size_t>(row_ptr_[row + 1] - row_ptr_[row])};
}

void SparseMatrix::multiply(std::span<const double> x, std::span<double> y, Exec exec) const
{
    if (static_cast<int>(x.size()) != dim_ || static_cast<int>(y.size()) != dim_)
        throw Error("sparse multiply: dimension mismatch");
    auto row = [&](int r) {
        double acc = 0.0;
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
            acc += values_[k] * x[cols_[k]];
        y[r] = acc;
    };
    if (exec == Exec::Serial) {
        for (int r = 0; r < dim_; ++r)
            row(r);
    } else {
#pragma omp parallel for schedule(static)
        for (int r = 0; r < dim_; ++r)
            row(r);
    }
}

Eigen::VectorXd SparseMatrix::operator*(const Eigen::VectorXd& x) const
{
    Eigen::VectorXd y(dim_);
    multiply({x.data(), static_cast<std::size_t>(x.size())}, {y.data(), static_cast<std::size_t>(y.size())});
    return y;
}

double SparseMatrix::quadratic_form(std::span<const double> x) const
{
    std::vector<double> y(dim_);
    multiply(x, y);
    double acc = 0.0;
    for (int i = 0; i < dim_; ++i)
        acc += x[i] * y[i];
    return acc;
}

bool SparseMatrix::is_symmetric() const
{
    for (int r = 0; r < dim_; ++r) {
        auto cols = row_columns(r);
        auto vals = row_values(r);
        for (std::size_t k = 0; k < cols.size(); ++k)
            if (coeff(cols[k], r) != vals[k])
                return false;
    }
    return true;
}

SparseMatrix SparseMatrix::shifted_identity(double scale) const
{
    std::vector<Triplet> t;
    t.reserve(values_.size() + dim_);
    for (int r = 0; r < dim_; ++r) {
        bool has_diag = false;
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
            double v = scale * values_[k];
            if (cols_[k] == r) {
                v += 1.0;
                has_diag = true;
            }
            t.push_back({r, cols_[k], v});
        }
        if (!has_diag)
            t.push_back({r, r, 1.0});
    }
    return from_triplets(dim_, t);
}

// --- Laplacian ----------------------------------------------------------------

namespace {

double clamped_cot(const Vec3& u, const Vec3& v)
{
    double cross = u.cross(v).norm();
    double dot = u.dot(v);
    if (cross <= std::abs(dot) / kMaxCotangent)
        return dot >= 0.0 ? kMaxCotangent : -kMaxCotangent;
    return std::clamp(dot / cross, -kMaxCotangent, kMaxCotangent);
}

} // namespace

SparseMatrix cotangent_laplacian(const TriMesh& mesh)
{
    struct HalfWeight
    {
        std::uint64_t key;
        double half_cot;
    };
    std::vector<HalfWeight> entries;
    entries.reserve(mesh.faces.size() * 3);
    for (const Face& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            int o = f[k];
            int i = f[(k + 1) % 3];
            int j = f[(k + 2) % 3];
            const Vec3& p = mesh.vertices[o];
            double c = clamped_cot(mesh.vertices[i] - p, mesh.vertices[j] - p);
            entries.push_back({edge_key(std::min(i, j), std::max(i, j)), 0.5 * c});
        }
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const HalfWeight& a, const HalfWeight& b) { return a.key < b.key; });

    const int n = static_cast<int>(mesh.vertices.size());
    std::vector<SparseMatrix::Triplet> triplets;
    std::vector<double> diag(n, 0.0);
    for (std::size_t s = 0; s < entries.size();) {
        std::size_t e = s;
        double weight = 0.0;
        while (e < entries.size() && entries[e].key == entries[s].key) {
            weight += entries[e].half_cot;
            ++e;
        }
        if (e - s > 2) {
            throw Error("non-manifold edge (" + std::to_string(entries[s].key >> 32) + ", " +
                        std::to_string(entries[s].key & 0xffffffffu) + ") shared by " + std::to_string(e - s) +
                        " faces");
        }
        int i = static_cast<int>(entries[s].key >> 32);
        int j = static_cast<int>(entries[s].key & 0xffffffffu);
        double w = -weight;
        triplets.push_back({i, j, w});
        triplets.push_back({j, i, w});
        diag[i] -= w;
        diag[j] -= w;
        s = e;
    }
    for (int i = 0; i < n; ++i)
        triplets.push_back({i, i, diag[i]});
    return SparseMatrix::from_triplets(n, triplets);
}

// --- distances ---------------------------------------------------------------

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
    Vec3 ab = b - a;
    Vec3 ac = c - a;
    Vec3 ap = p - a;
    double d1 = ab.dot(ap);
    double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0)
        return a;

    Vec3 bp = p - b;
    double d3 = ab.dot(bp);
    double d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3)
        return b;

    double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0)
        return a + (d1 / (d1 - d3)) * ab;

    Vec3 cp = p - c;
    double d5 = ab.dot(cp);
    double d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6)
        return c;

    double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0)
        return a + (d2 / (d2 - d6)) * ac;

    double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

    double denom = va + vb + vc;
    if (denom == 0.0) // degenerate triangle
        return a;
    double v = vb / denom;
    double w = vc / denom;
    return a + ab * v + ac * w;
}

double mesh_l2_distance(const TriMesh& a, const TriMesh& b)
{
    if (a.vertices.empty() || b.vertices.empty() || b.faces.empty())
        throw Error("mesh_l2_distance: empty mesh");
    TriangleBvh bvh(b);
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.vertices.size());
    std::vector<double> d(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        d[i] = bvh.closest(a.vertices[i]).distance;
    double sum = 0.0;
    for (double x : d)
        sum += x;
    return sum / static_cast<double>(n);
}

// --- construction helpers ----------------------------------------------------

TriMesh make_icosphere(int subdivisions, double radius, const Vec3& center)
{
    if (subdivisions < 0)
        throw Error("make_icosphere: negative subdivision level");
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
    };
    for (Vec3& v : verts)
        v.normalize();
    std::vector<Face> faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
        {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
        {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
    };

    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end())
                return it->second;
            int idx = static_cast<int>(verts.size());
            verts.push_back((verts[a] + verts[b]).normalized());
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<Face> next;
        next.reserve(faces.size() * 4);
        for (const Face& f : faces) {
            int ab = mid(f[0], f[1]);
            int bc = mid(f[1], f[2]);
            int ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    TriMesh mesh;
    mesh.faces = std::move(faces);
    mesh.vertices.reserve(verts.size());
    for (const Vec3& v : verts)
        mesh.vertices.push_back(center + radius * v);
    return mesh;
}

TriMesh remove_vertices(const TriMesh& mesh, const std::vector<bool>& drop)
{
    if (drop.size() != mesh.vertices.size())
        throw Error("remove_vertices: mask size mismatch");
    std::vector<int> remap(mesh.vertices.size(), -1);
    TriMesh out;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        if (drop[v])
            continue;
        remap[v] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[v]);
    }
    for (const Face& f : mesh.faces) {
        if (remap[f[0]] < 0 || remap[f[1]] < 0 || remap[f[2]] < 0)
            continue;
        out.faces.push_back({remap[f[0]], remap[f[1]], remap[f[2]]});
    }
    return out;
}

} // namespace georefine

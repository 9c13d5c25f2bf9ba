#pragma once

#include "georefine/common.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace georefine {

using Face = std::array<int, 3>;

/// Indexed triangle mesh, counter-clockwise winding.
struct TriMesh
{
    std::vector<Vec3> vertices;
    std::vector<Face> faces;

    std::size_t num_vertices() const { return vertices.size(); }
    std::size_t num_faces() const { return faces.size(); }
    Aabb bounds() const;

    // Throws Error if an index is out of range, a face repeats an index, or a
    // directed edge occurs twice (inconsistent winding or non-manifold edge).
    void validate() const;
};

enum class MeshFormat { Auto, Obj, Ply };

TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format = MeshFormat::Auto);
TriMesh read_obj(std::istream& in);
TriMesh read_ply(std::istream& in);

/// Writes ASCII OBJ using shortest round-trip float formatting, so a
/// save/load cycle reproduces the vertex list bit for bit.
void save_obj(const std::filesystem::path& path, const TriMesh& mesh);
void write_obj(std::ostream& out, const TriMesh& mesh);

/// Area-weighted vertex normals. Isolated vertices get the zero vector.
std::vector<Vec3> vertex_normals(const TriMesh& mesh, Exec exec = Exec::Parallel);

/// Square sparse matrix in compressed-row form with sorted column indices.
class SparseMatrix
{
public:
    struct Triplet
    {
        int row;
        int col;
        double value;
    };

    SparseMatrix() = default;

    // Duplicate (row, col) entries are summed in input order.
    static SparseMatrix from_triplets(int dimension, std::span<const Triplet> triplets);
    static SparseMatrix identity(int dimension);

    int dimension() const { return dim_; }
    std::size_t nonzeros() const { return values_.size(); }

    double coeff(int row, int col) const;
    std::span<const int> row_columns(int row) const;
    std::span<const double> row_values(int row) const;

    void multiply(std::span<const double> x, std::span<double> y, Exec exec = Exec::Parallel) const;
    Eigen::VectorXd operator*(const Eigen::VectorXd& x) const;
    double quadratic_form(std::span<const double> x) const;
    bool is_symmetric() const;

    // Returns I + scale * this.
    SparseMatrix shifted_identity(double scale) const;

private:
    int dim_ = 0;
    std::vector<int> row_ptr_{0};
    std::vector<int> cols_;
    std::vector<double> values_;
};

/// |cot| is clamped to cot(1 degree) so slivers cannot blow up the weights.
inline constexpr double kMaxCotangent = 57.289961630759425;

/// Cotangent Laplacian: L_ij = -(cot a + cot b)/2 for neighbours, L_ii = -sum_j L_ij.
/// Boundary edges carry their single cotangent. Throws on edges shared by
/// more than two faces.
SparseMatrix cotangent_laplacian(const TriMesh& mesh);

/// Mean over the vertices of `a` of the distance to the closest point of
/// surface `b`. One-directional: generally distance(a, b) != distance(b, a).
double mesh_l2_distance(const TriMesh& a, const TriMesh& b);

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Icosahedron subdivided `subdivisions` times and projected onto a sphere.
/// Has 10 * 4^k + 2 vertices.
TriMesh make_icosphere(int subdivisions, double radius = 1.0, const Vec3& center = Vec3::Zero());

/// Drops the listed vertices and every face touching them, compacting indices
/// in order.
TriMesh remove_vertices(const TriMesh& mesh, const std::vector<bool>& drop);

} // namespace georefine

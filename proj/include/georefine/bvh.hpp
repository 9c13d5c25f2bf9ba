#pragma once

#include "georefine/mesh.hpp"

namespace georefine {

/// Bounding-volume hierarchy over the triangles of a mesh, for closest-point
/// queries. Immutable once built; queries are thread-safe.
class TriangleBvh
{
public:
    struct Hit
    {
        Vec3 point;
        double distance = std::numeric_limits<double>::infinity();
        int face = -1;
    };

    TriangleBvh() = default;
    explicit TriangleBvh(TriMesh mesh);

    bool empty() const { return mesh_.faces.empty(); }
    const TriMesh& mesh() const { return mesh_; }

    Hit closest(const Vec3& p) const;

private:
    struct Node
    {
        Aabb box;
        int left = -1; // child index, or -1 for leaves
        int right = -1;
        int first = 0; // into order_
        int count = 0;
    };

    int build(int first, int count, int depth);

    TriMesh mesh_;
    std::vector<int> order_;
    std::vector<Aabb> face_boxes_;
    std::vector<Vec3> centroids_;
    std::vector<Node> nodes_;
};

} // namespace georefine

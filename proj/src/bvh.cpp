#include "georefine/bvh.hpp"

#include <algorithm>
#include <numeric>

namespace georefine {

namespace {

constexpr int kLeafSize = 4;

double box_distance_sq(const Aabb& box, const Vec3& p)
{
    Vec3 d = (box.min - p).cwiseMax(p - box.max).cwiseMax(Vec3::Zero());
    return d.squaredNorm();
}

} // namespace

TriangleBvh::TriangleBvh(TriMesh mesh) : mesh_(std::move(mesh))
{
    const int nf = static_cast<int>(mesh_.faces.size());
    order_.resize(nf);
    std::iota(order_.begin(), order_.end(), 0);
    face_boxes_.resize(nf);
    centroids_.resize(nf);
    for (int f = 0; f < nf; ++f) {
        Aabb box;
        Vec3 c = Vec3::Zero();
        for (int v : mesh_.faces[f]) {
            box.expand(mesh_.vertices[v]);
            c += mesh_.vertices[v];
        }
        face_boxes_[f] = box;
        centroids_[f] = c / 3.0;
    }
    if (nf > 0) {
        nodes_.reserve(2 * (nf / kLeafSize + 1));
        build(0, nf, 0);
    }
}

int TriangleBvh::build(int first, int count, int depth)
{
    int index = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Aabb box;
    Aabb centroid_box;
    for (int k = first; k < first + count; ++k) {
        const Aabb& fb = face_boxes_[order_[k]];
        box.expand(fb.min);
        box.expand(fb.max);
        centroid_box.expand(centroids_[order_[k]]);
    }
    nodes_[index].box = box;
    nodes_[index].first = first;
    nodes_[index].count = count;
    if (count <= kLeafSize || depth > 100)
        return index;

    int axis = 0;
    centroid_box.extent().maxCoeff(&axis);
    int mid = first + count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count, [&](int a, int b) {
        double ca = centroids_[a][axis];
        double cb = centroids_[b][axis];
        return ca != cb ? ca < cb : a < b;
    });
    int left = build(first, mid - first, depth + 1);
    int right = build(mid, first + count - mid, depth + 1);
    nodes_[index].left = left;
    nodes_[index].right = right;
    nodes_[index].count = 0;
    return index;
}

TriangleBvh::Hit TriangleBvh::closest(const Vec3& p) const
{
    Hit best;
    if (nodes_.empty())
        return best;
    double best_sq = std::numeric_limits<double>::infinity();
    int stack[256];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& node = nodes_[stack[--top]];
        if (box_distance_sq(node.box, p) > best_sq)
            continue;
        if (node.left < 0) {
            for (int k = node.first; k < node.first + node.count; ++k) {
                int f = order_[k];
                const Face& t = mesh_.faces[f];
                Vec3 q = closest_point_on_triangle(p, mesh_.vertices[t[0]], mesh_.vertices[t[1]], mesh_.vertices[t[2]]);
                double d = (q - p).squaredNorm();
                // Ties resolve to the lowest face index so results are order independent.
                if (d < best_sq || (d == best_sq && f < best.face)) {
                    best_sq = d;
                    best.point = q;
                    best.face = f;
                }
            }
            continue;
        }
        double dl = box_distance_sq(nodes_[node.left].box, p);
        double dr = box_distance_sq(nodes_[node.right].box, p);
        // Push the farther child first so the nearer one is visited next.
        if (dl < dr) {
            stack[top++] = node.right;
            stack[top++] = node.left;
        } else {
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }
    best.distance = std::sqrt(best_sq);
    return best;
}

} // namespace georefine

#pragma once

#include "georefine/mesh.hpp"

#include <Eigen/Dense>

#include <array>
#include <filesystem>

namespace georefine {

/// Joints of the kinematic chain, in the order their axis-angle triples appear
/// in HeadParams::theta after the global rotation.
enum Joint : int { kNeck = 0, kJaw = 1, kLeftEye = 2, kRightEye = 3 };
inline constexpr int kNumJoints = 4;
inline constexpr int kThetaSize = 3 * kNumJoints + 3;
/// Pose-corrective features: (R_j - I) flattened for every non-global joint.
inline constexpr int kPoseFeatures = 9 * kNumJoints;

struct HeadParams
{
    Eigen::VectorXd beta;  // identity
    Eigen::VectorXd theta; // global + per-joint axis-angle, radians
    Eigen::VectorXd psi;   // expression

    static HeadParams zeros(int n_shape, int n_expr);
};

/// Linear blend-skinned blendshape head model.
///
/// Bases are stored as (3N x K) matrices whose row 3v+c holds coordinate c of
/// vertex v, matching an N x 3 x K row-major tensor.
struct BlendshapeModel
{
    TriMesh template_mesh;
    Eigen::MatrixXd shape_basis;
    Eigen::MatrixXd pose_basis; // 3N x kPoseFeatures
    Eigen::MatrixXd expr_basis;
    Eigen::MatrixXd skin_weights; // N x kNumJoints, rows sum to one
    std::array<Vec3, kNumJoints> joints;

    int num_vertices() const { return static_cast<int>(template_mesh.vertices.size()); }
    int num_shape() const { return static_cast<int>(shape_basis.cols()); }
    int num_expr() const { return static_cast<int>(expr_basis.cols()); }

    void validate() const;
};

/// Parent of each joint; -1 is the global (root) transform.
inline constexpr std::array<int, kNumJoints> kJointParent = {-1, kNeck, kNeck, kNeck};

Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle);

/// Posed mesh: skinning applied to template + shape + pose-corrective + expression offsets.
TriMesh evaluate_model(const BlendshapeModel& model, const HeadParams& params);

/// Deterministic stand-in head model: a 0.09 m icosphere with the neck opening
/// removed, smooth centred blendshape bases, a jaw pose corrective and
/// geodesic-falloff skin weights. `subdivisions` must lie in [1, 5].
BlendshapeModel generate_synthetic_model(std::uint64_t seed, int subdivisions, int n_shape = 10, int n_expr = 10);

inline constexpr double kHeadRadius = 0.09;

/// Manifest JSON + raw little-endian f64 blobs (row-major).
BlendshapeModel load_model_manifest(const std::filesystem::path& manifest);
void save_model_manifest(const BlendshapeModel& model, const std::filesystem::path& manifest);

} // namespace georefine

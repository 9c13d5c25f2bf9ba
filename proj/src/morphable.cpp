#include "georefine/morphable.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace georefine {

HeadParams HeadParams::zeros(int n_shape, int n_expr)
{
    return {Eigen::VectorXd::Zero(n_shape), Eigen::VectorXd::Zero(kThetaSize), Eigen::VectorXd::Zero(n_expr)};
}

void BlendshapeModel::validate() const
{
    const Eigen::Index n3 = 3 * static_cast<Eigen::Index>(template_mesh.vertices.size());
    template_mesh.validate();
    if (shape_basis.rows() != n3 || expr_basis.rows() != n3 || pose_basis.rows() != n3)
        throw Error("blendshape bases do not match the template vertex count");
    if (pose_basis.cols() != kPoseFeatures)
        throw Error("pose basis must have " + std::to_string(kPoseFeatures) + " columns");
    if (skin_weights.rows() != n3 / 3 || skin_weights.cols() != kNumJoints)
        throw Error("skin weights must be N x " + std::to_string(kNumJoints));
    for (Eigen::Index v = 0; v < skin_weights.rows(); ++v) {
        if ((skin_weights.row(v).array() < 0.0).any() || (skin_weights.row(v).array() > 1.0).any())
            throw Error("skin weight outside [0,1] at vertex " + std::to_string(v));
        if (std::abs(skin_weights.row(v).sum() - 1.0) > 1e-6)
            throw Error("skin weights of vertex " + std::to_string(v) + " do not sum to one");
    }
}

Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle)
{
    double angle = axis_angle.norm();
    if (angle == 0.0)
        return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

namespace {

struct Rigid
{
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    Vec3 trans = Vec3::Zero();

    Rigid compose(const Rigid& inner) const { return {rot * inner.rot, rot * inner.trans + trans}; }
};

} // namespace

TriMesh evaluate_model(const BlendshapeModel& model, const HeadParams& params)
{
    if (params.beta.size() != model.num_shape() || params.psi.size() != model.num_expr() ||
        params.theta.size() != kThetaSize)
        throw Error("head parameter dimensions do not match the model (beta " + std::to_string(params.beta.size()) +
                    "/" + std::to_string(model.num_shape()) + ", theta " + std::to_string(params.theta.size()) + "/" +
                    std::to_string(kThetaSize) + ", psi " + std::to_string(params.psi.size()) + "/" +
                    std::to_string(model.num_expr()) + ")");
    if (!params.beta.allFinite() || !params.theta.allFinite() || !params.psi.allFinite())
        throw Error("head parameters must be finite");
    for (int j = 0; j <= kNumJoints; ++j)
        if (params.theta.segment<3>(3 * j).norm() >= std::numbers::pi)
            throw Error("rotation of joint " + std::to_string(j) + " must be below pi");

    std::array<Eigen::Matrix3d, kNumJoints + 1> rot;
    for (int j = 0; j <= kNumJoints; ++j)
        rot[j] = axis_angle_to_matrix(params.theta.segment<3>(3 * j));

    Eigen::VectorXd pose_features(kPoseFeatures);
    for (int j = 0; j < kNumJoints; ++j) {
        Eigen::Matrix3d d = rot[j + 1] - Eigen::Matrix3d::Identity();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                pose_features[9 * j + 3 * r + c] = d(r, c);
    }

    Eigen::VectorXd offsets = model.shape_basis * params.beta + model.expr_basis * params.psi;
    if (!pose_features.isZero(0.0))
        offsets += model.pose_basis * pose_features;

    Rigid root{rot[0], Vec3::Zero()};
    std::array<Rigid, kNumJoints> world;
    for (int j = 0; j < kNumJoints; ++j) {
        const Vec3& c = model.joints[j];
        Rigid local{rot[j + 1], c - rot[j + 1] * c};
        const Rigid& parent = kJointParent[j] < 0 ? root : world[kJointParent[j]];
        world[j] = parent.compose(local);
    }

    // Skinning is applied as a blended delta from identity so the rest pose
    // reproduces the shaped template exactly.
    std::array<Eigen::Matrix3d, kNumJoints> drot;
    for (int j = 0; j < kNumJoints; ++j)
        drot[j] = world[j].rot - Eigen::Matrix3d::Identity();

    TriMesh out;
    out.faces = model.template_mesh.faces;
    out.vertices.resize(model.template_mesh.vertices.size());
    for (std::size_t v = 0; v < out.vertices.size(); ++v) {
        Vec3 p = model.template_mesh.vertices[v] + offsets.segment<3>(3 * static_cast<Eigen::Index>(v));
        Vec3 delta = Vec3::Zero();
        for (int j = 0; j < kNumJoints; ++j) {
            double w = model.skin_weights(static_cast<Eigen::Index>(v), j);
            if (w != 0.0)
                delta += w * (drot[j] * p + world[j].trans);
        }
        out.vertices[v] = p + delta;
    }
    return out;
}

// --- synthetic model -----------------------------------------------------------

namespace {

Vec3 random_direction(SplitMix64& rng)
{
    for (;;) {
        Vec3 d(2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0);
        double n = d.norm();
        if (n > 1e-3 && n <= 1.0)
            return d / n;
    }
}

// Radial displacement made of a few smooth von Mises-Fisher bumps, centred so
// the mean displacement vector is zero.
Eigen::VectorXd bump_column(const TriMesh& mesh, SplitMix64& rng, double amplitude, bool frontal_only)
{
    const std::size_t n = mesh.vertices.size();
    Eigen::VectorXd col = Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(n));
    for (int b = 0; b < 3; ++b) {
        Vec3 c = random_direction(rng);
        if (frontal_only && c.z() < 0.3) {
            c.z() = 0.3 + 0.7 * rng.uniform();
            c.normalize();
        }
        double kappa = 3.0 + 5.0 * rng.uniform();
        double a = amplitude * rng.normal();
        for (std::size_t v = 0; v < n; ++v) {
            Vec3 u = mesh.vertices[v].normalized();
            col.segment<3>(3 * static_cast<Eigen::Index>(v)) += a * std::exp(kappa * (u.dot(c) - 1.0)) * u;
        }
    }
    Vec3 mean = Vec3::Zero();
    for (std::size_t v = 0; v < n; ++v)
        mean += col.segment<3>(3 * static_cast<Eigen::Index>(v));
    mean /= static_cast<double>(n);
    for (std::size_t v = 0; v < n; ++v)
        col.segment<3>(3 * static_cast<Eigen::Index>(v)) -= mean;
    return col;
}

} // namespace

BlendshapeModel generate_synthetic_model(std::uint64_t seed, int subdivisions, int n_shape, int n_expr)
{
    if (subdivisions < 1 || subdivisions > 5)
        throw Error("synthetic model subdivisions must lie in [1, 5]");
    if (n_shape < 0 || n_expr < 0)
        throw Error("negative basis size");

    const double r = kHeadRadius;
    TriMesh sphere = make_icosphere(subdivisions, r);
    std::vector<bool> drop(sphere.vertices.size());
    for (std::size_t v = 0; v < drop.size(); ++v)
        drop[v] = sphere.vertices[v].y() < -0.8 * r;

    BlendshapeModel model;
    model.template_mesh = remove_vertices(sphere, drop);
    const TriMesh& mesh = model.template_mesh;
    const Eigen::Index n = static_cast<Eigen::Index>(mesh.vertices.size());

    SplitMix64 rng(hash_seed(seed, 0x5eed));
    model.shape_basis.resize(3 * n, n_shape);
    for (int k = 0; k < n_shape; ++k)
        model.shape_basis.col(k) = bump_column(mesh, rng, 0.004, false);
    model.expr_basis.resize(3 * n, n_expr);
    for (int k = 0; k < n_expr; ++k)
        model.expr_basis.col(k) = bump_column(mesh, rng, 0.003, true);

    model.joints[kNeck] = Vec3(0.0, -0.06, -0.01);
    model.joints[kJaw] = Vec3(0.0, -0.02, 0.01);
    model.joints[kLeftEye] = Vec3(0.03, 0.02, 0.06);
    model.joints[kRightEye] = Vec3(-0.03, 0.02, 0.06);

    // Jaw corrective: opening the jaw about x pushes the chin region forward.
    model.pose_basis = Eigen::MatrixXd::Zero(3 * n, kPoseFeatures);
    const int jaw_sin_feature = 9 * kJaw + 3 * 2 + 1; // entry (2,1) of R_jaw - I
    for (Eigen::Index v = 0; v < n; ++v) {
        Vec3 u = mesh.vertices[v] / r;
        double lower = std::max(0.0, -u.y()) * std::max(0.0, u.z());
        model.pose_basis(3 * v + 2, jaw_sin_feature) = 0.01 * lower;
        model.pose_basis(3 * v + 1, jaw_sin_feature) = -0.005 * lower;
    }
    for (int axis = 0; axis < 3; ++axis) {
        double mean = 0.0;
        for (Eigen::Index v = 0; v < n; ++v)
            mean += model.pose_basis(3 * v + axis, jaw_sin_feature);
        mean /= static_cast<double>(n);
        for (Eigen::Index v = 0; v < n; ++v)
            model.pose_basis(3 * v + axis, jaw_sin_feature) -= mean;
    }

    // Skin weights fall off with great-circle distance from each joint's
    // surface site. The neck has a wide support so it owns the bulk of the head.
    const std::array<Vec3, kNumJoints> sites = {
        Vec3(0.0, -1.0, 0.0).normalized(), Vec3(0.0, -0.6, 0.8).normalized(),
        Vec3(0.35, 0.25, 0.9).normalized(), Vec3(-0.35, 0.25, 0.9).normalized()};
    const std::array<double, kNumJoints> spread = {0.25, 0.035, 0.015, 0.015};
    model.skin_weights.resize(n, kNumJoints);
    for (Eigen::Index v = 0; v < n; ++v) {
        Vec3 u = mesh.vertices[v].normalized();
        double total = 0.0;
        for (int j = 0; j < kNumJoints; ++j) {
            double geodesic = r * std::acos(std::clamp(u.dot(sites[j]), -1.0, 1.0));
            double w = std::exp(-std::pow(geodesic / spread[j], 2));
            if (j == kNeck)
                w = std::max(w, 0.05);
            model.skin_weights(v, j) = w;
            total += w;
        }
        model.skin_weights.row(v) /= total;
    }
    return model;
}

// --- manifest I/O ------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "raw blobs are little-endian");

std::vector<double> read_blob(const std::filesystem::path& path, std::size_t expected)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open blob '" + path.string() + "'");
    std::vector<double> data(expected);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expected * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(expected * sizeof(double)))
        throw Error("blob '" + path.string() + "' is shorter than " + std::to_string(expected) + " doubles");
    char extra;
    if (in.read(&extra, 1))
        throw Error("blob '" + path.string() + "' is longer than " + std::to_string(expected) + " doubles");
    return data;
}

void write_blob(const std::filesystem::path& path, const std::vector<double>& data)
{
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!out)
        throw Error("cannot write blob '" + path.string() + "'");
}

// Row-major flattening of an Eigen matrix.
std::vector<double> row_major(const Eigen::MatrixXd& m)
{
    std::vector<double> out(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), m.rows(), m.cols()) = m;
    return out;
}

Eigen::MatrixXd from_row_major(const std::vector<double>& d, Eigen::Index rows, Eigen::Index cols)
{
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(d.data(), rows, cols);
}

} // namespace

BlendshapeModel load_model_manifest(const std::filesystem::path& manifest)
{
    std::ifstream in(manifest);
    if (!in)
        throw Error("cannot open model manifest '" + manifest.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest.string() + ": " + e.what());
    }
    const auto dir = manifest.parent_path();
    try {
        const auto n = j.at("num_vertices").get<Eigen::Index>();
        const auto nf = j.at("num_faces").get<Eigen::Index>();
        const auto ns = j.at("num_shape").get<Eigen::Index>();
        const auto ne = j.at("num_expr").get<Eigen::Index>();
        if (j.value("num_pose", kPoseFeatures) != kPoseFeatures || j.value("num_joints", kNumJoints) != kNumJoints)
            throw Error("manifest pose/joint dimensions are not supported");
        const auto& blobs = j.at("blobs");
        auto blob = [&](const char* key, std::size_t count) {
            return read_blob(dir / blobs.at(key).get<std::string>(), count);
        };

        BlendshapeModel model;
        auto verts = blob("template", static_cast<std::size_t>(3 * n));
        model.template_mesh.vertices.resize(static_cast<std::size_t>(n));
        for (Eigen::Index v = 0; v < n; ++v)
            model.template_mesh.vertices[v] = Vec3(verts[3 * v], verts[3 * v + 1], verts[3 * v + 2]);
        auto faces = blob("faces", static_cast<std::size_t>(3 * nf));
        model.template_mesh.faces.resize(static_cast<std::size_t>(nf));
        for (Eigen::Index f = 0; f < nf; ++f)
            for (int k = 0; k < 3; ++k) {
                double idx = faces[3 * f + k];
                if (idx != std::floor(idx))
                    throw Error("non-integer face index in faces blob");
                model.template_mesh.faces[f][k] = static_cast<int>(idx);
            }
        model.shape_basis = from_row_major(blob("shape_basis", static_cast<std::size_t>(3 * n * ns)), 3 * n, ns);
        model.expr_basis = from_row_major(blob("expr_basis", static_cast<std::size_t>(3 * n * ne)), 3 * n, ne);
        model.pose_basis =
            from_row_major(blob("pose_basis", static_cast<std::size_t>(3 * n * kPoseFeatures)), 3 * n, kPoseFeatures);
        model.skin_weights =
            from_row_major(blob("skin_weights", static_cast<std::size_t>(n * kNumJoints)), n, kNumJoints);
        auto joints = blob("joints", 3 * kNumJoints);
        for (int k = 0; k < kNumJoints; ++k)
            model.joints[k] = Vec3(joints[3 * k], joints[3 * k + 1], joints[3 * k + 2]);
        model.validate();
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest.string() + ": " + e.what());
    }
}

void save_model_manifest(const BlendshapeModel& model, const std::filesystem::path& manifest)
{
    const auto dir = manifest.parent_path();
    const std::string stem = manifest.stem().string();
    const Eigen::Index n = model.num_vertices();

    std::vector<double> verts;
    for (const Vec3& v : model.template_mesh.vertices)
        verts.insert(verts.end(), {v.x(), v.y(), v.z()});
    std::vector<double> faces;
    for (const Face& f : model.template_mesh.faces)
        faces.insert(faces.end(), {double(f[0]), double(f[1]), double(f[2])});
    std::vector<double> joints;
    for (const Vec3& v : model.joints)
        joints.insert(joints.end(), {v.x(), v.y(), v.z()});

    nlohmann::json blobs;
    auto put = [&](const char* key, const std::vector<double>& data) {
        std::string name = stem + "." + key + ".f64";
        write_blob(dir / name, data);
        blobs[key] = name;
    };
    put("template", verts);
    put("faces", faces);
    put("shape_basis", row_major(model.shape_basis));
    put("expr_basis", row_major(model.expr_basis));
    put("pose_basis", row_major(model.pose_basis));
    put("skin_weights", row_major(model.skin_weights));
    put("joints", joints);

    nlohmann::json j = {
        {"format", "blendshape-model"},
        {"version", 1},
        {"num_vertices", n},
        {"num_faces", model.template_mesh.faces.size()},
        {"num_shape", model.num_shape()},
        {"num_expr", model.num_expr()},
        {"num_pose", kPoseFeatures},
        {"num_joints", kNumJoints},
        {"blobs", blobs},
    };
    std::ofstream out(manifest);
    out << j.dump(2) << '\n';
    if (!out)
        throw Error("cannot write manifest '" + manifest.string() + "'");
}

} // namespace georefine

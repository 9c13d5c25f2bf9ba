#pragma once

#include "georefine/morphable.hpp"
#include "georefine/radiance_field.hpp"
#include "georefine/refine.hpp"
#include "georefine/smooth.hpp"
#include "georefine/train.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace georefine {

/// Procedural albedo with fixed directional shading, so geometric detail is
/// visible in the images.
struct ColorSpec
{
    Vec3 base{0.75, 0.55, 0.45};
    double amplitude = 0.15;  // albedo pattern strength
    double frequency = 60.0;  // rad/m
    Vec3 light = Vec3(0.3, 0.5, 1.0).normalized(); // normalized again on use
    double ambient = 0.35;

    Vec3 albedo(const Vec3& q) const;
};

/// Ground-truth radiance: analytic density plus shaded albedo.
class AnalyticScene final : public RadianceSource
{
public:
    AnalyticScene(ShapeSpec shape, ColorSpec color);

    Aabb bounds() const override { return density_.bounds(); }
    void evaluate(std::span<const Vec3> points, const Vec3& direction, std::span<double> sigma,
                  std::span<Vec3> rgb) const override;

    const AnalyticDensity& density() const { return density_; }
    Vec3 color(const Vec3& q) const;

private:
    AnalyticDensity density_;
    ColorSpec color_;
};

/// Zero level set of a primitive as a radial mesh over an icosphere.
TriMesh shape_surface_mesh(const ShapePrimitive& shape, int subdivisions);

struct TrajectorySpec
{
    int train_frames = 20;
    int heldout_frames = 5;
    int width = 48;
    int height = 48;
    double focal = 85.0;     // pixels
    double distance = 0.4;   // m from the target
    double yaw_deg = 40.0;   // training views span [-yaw, yaw]
    double pitch_deg = 15.0;
    Vec3 target = Vec3::Zero();
    Vec3 frontal = Vec3::UnitZ();
};

/// Cameras on a frontal arc. Held-out views sit between training views.
std::vector<Camera> orbit_cameras(const TrajectorySpec& spec, bool heldout);

struct TemplateSpec
{
    std::string kind = "synthetic"; // synthetic | mesh | manifest
    int subdivisions = 3;
    std::uint64_t seed = 1;
    std::filesystem::path path;
};

/// An externally supplied frame.
struct FrameFile
{
    std::filesystem::path image;
    Camera camera;
    HeadParams params;
    bool heldout = false;
};

struct Variant
{
    std::string label = "full";
    bool perturb = true;
    bool smooth = true;
};

/// Table labels: "full", "w/o Smo.", "w/o Per.", "w/o Per. + Smo.".
Variant variant_from_flags(bool perturb, bool smooth);
Variant variant_from_label(const std::string& label);
std::string variant_slug(const Variant& v);

struct SceneConfig
{
    std::string name = "scene";
    std::uint64_t seed = 0;
    std::optional<ShapeSpec> truth;
    ColorSpec color;
    TemplateSpec template_spec;
    TrajectorySpec trajectory;
    std::vector<FrameFile> frame_files; // when set, replaces the synthetic trajectory
    FieldConfig field;
    TrainConfig train;
    TrainConfig phase2;
    bool cold_start = false;
    HeightFieldOptions height_field;
    PerturbConfig perturb;
    SmoothConfig smooth;
    int eval_samples = 64;
    int truth_samples = 128;
    int truth_mesh_subdivisions = 5;
    std::vector<Variant> variants{Variant{}, variant_from_label("w/o Per. + Smo.")};
    double cross_section_x = 0.0;
    double cross_section_half_width = 0.004;
};

/// Unknown keys are rejected with their JSON path. Relative paths resolve
/// against base_dir. Partial configs (no truth and no frames) are accepted
/// when require_source is false.
SceneConfig parse_scene(const nlohmann::json& j, const std::filesystem::path& base_dir = {},
                        bool require_source = true);
SceneConfig load_scene(const std::filesystem::path& path, bool require_source = true);
/// Every effective value, in the same schema parse_scene accepts.
nlohmann::json scene_to_json(const SceneConfig& scene);

/// JSON helpers shared with the CLI.
nlohmann::json vec_json(const Vec3& v);
Vec3 parse_vec3(const nlohmann::json& j, const std::string& where);
/// Numbers, with non-finite values spelled "inf", "-inf" or "nan".
nlohmann::json number_json(double v);

} // namespace georefine

#pragma once

#include "georefine/scene.hpp"

#include <functional>

namespace georefine {

struct RefineOutcome
{
    Eigen::MatrixX3d displacement; // raw perturbation D
    Eigen::MatrixX3d smoothed;     // X; equals D when smoothing is off
    TriMesh refined;
    std::optional<HeightField> height_field;
    double displacement_energy = 0.0; // D^T L D
    double smoothed_energy = 0.0;     // X^T L X
    int displaced_vertices = 0;
};

/// Height field -> SDF -> perturbation -> smoothing -> refined mesh. With
/// perturb off the mesh comes back unchanged. A density without any surface
/// leaves the mesh in place and logs a warning.
RefineOutcome refine_mesh(const TriMesh& mesh, const DensitySource& density, const HeightFieldOptions& hf_options,
                          const PerturbConfig& perturb, const SmoothConfig& smooth, bool do_perturb, bool do_smooth,
                          Exec exec = Exec::Parallel);

/// Static-topology model for a plain mesh: no blendshapes, all weight on
/// one joint, so every parameter vector evaluates to the mesh itself.
BlendshapeModel rigid_model(const TriMesh& mesh);

BlendshapeModel build_template_model(const TemplateSpec& spec);

struct PipelineOptions
{
    Exec exec = Exec::Parallel;
    std::function<void(const std::string&)> log;
};

/// Full two-phase run. Writes report.json, images, meshes and the
/// cross-section CSV under out_dir and returns the report.
nlohmann::json run_pipeline(const SceneConfig& scene, const std::filesystem::path& out_dir,
                            const PipelineOptions& options = {});

/// Mean held-out metrics as JSON (psnr may be "inf").
nlohmann::json metrics_json(const ImageMetrics& m);

} // namespace georefine

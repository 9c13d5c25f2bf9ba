#include "georefine/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace georefine {

using nlohmann::json;
namespace fs = std::filesystem;

RefineOutcome refine_mesh(const TriMesh& mesh, const DensitySource& density, const HeightFieldOptions& hf_options,
                          const PerturbConfig& perturb, const SmoothConfig& smooth, bool do_perturb, bool do_smooth,
                          Exec exec)
{
    RefineOutcome out;
    const Eigen::Index n = static_cast<Eigen::Index>(mesh.vertices.size());
    out.displacement = Eigen::MatrixX3d::Zero(n, 3);
    if (do_perturb) {
        HeightFieldOptions opts = hf_options;
        opts.frontal = perturb.frontal;
        HeightField hf = extract_height_field(density, opts, exec);
        out.height_field = hf;
        if (hf.valid_count() == 0) {
            log_warning("no surface found in the density field; the mesh is left unperturbed");
        } else {
            try {
                const SdfSurface sdf(std::move(hf));
                out.displacement = perturb_vertices(mesh, sdf, perturb, exec);
            } catch (const Error& e) {
                log_warning(std::string("perturbation skipped: ") + e.what());
            }
        }
    }
    const SparseMatrix lap = cotangent_laplacian(mesh);
    out.smoothed = do_smooth ? smooth_displacements(lap, out.displacement, smooth, exec) : out.displacement;
    out.displacement_energy = laplacian_energy(lap, out.displacement);
    out.smoothed_energy = laplacian_energy(lap, out.smoothed);
    for (Eigen::Index v = 0; v < n; ++v)
        out.displaced_vertices += !out.displacement.row(v).isZero(0.0);
    out.refined = apply_refinement(mesh, out.smoothed);
    return out;
}

BlendshapeModel rigid_model(const TriMesh& mesh)
{
    BlendshapeModel m;
    m.template_mesh = mesh;
    const Eigen::Index n3 = 3 * static_cast<Eigen::Index>(mesh.vertices.size());
    m.shape_basis = Eigen::MatrixXd::Zero(n3, 0);
    m.expr_basis = Eigen::MatrixXd::Zero(n3, 0);
    m.pose_basis = Eigen::MatrixXd::Zero(n3, kPoseFeatures);
    m.skin_weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mesh.vertices.size()), kNumJoints);
    m.skin_weights.col(kNeck).setOnes();
    const Vec3 c = mesh.bounds().center();
    for (Vec3& j : m.joints)
        j = c;
    return m;
}

BlendshapeModel build_template_model(const TemplateSpec& spec)
{
    if (spec.kind == "synthetic")
        return generate_synthetic_model(spec.seed, spec.subdivisions);
    if (spec.kind == "mesh")
        return rigid_model(load_mesh(spec.path));
    if (spec.kind == "manifest")
        return load_model_manifest(spec.path);
    throw Error("unknown template kind '" + spec.kind + "'");
}

json metrics_json(const ImageMetrics& m)
{
    return {{"l1", number_json(m.l1)}, {"psnr", number_json(m.psnr)}, {"ssim", number_json(m.ssim)}};
}

namespace {

struct StageError : Error
{
    using Error::Error;
};

template <typename F>
auto stage(const std::string& name, const PipelineOptions& opts, F&& fn)
{
    const auto start = std::chrono::steady_clock::now();
    if (opts.log)
        opts.log("[" + name + "] start");
    try {
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            if (opts.log)
                opts.log("[" + name + "] done in " +
                         std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()) +
                         " s");
        } else {
            auto r = fn();
            if (opts.log)
                opts.log("[" + name + "] done in " +
                         std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()) +
                         " s");
            return r;
        }
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("stage '" + name + "' failed: " + e.what());
    }
}

HeadParams fit_params(HeadParams p, const BlendshapeModel& model, const std::string& where)
{
    auto fit = [&](Eigen::VectorXd& v, Eigen::Index n, const char* name) {
        if (v.size() == 0)
            v = Eigen::VectorXd::Zero(n);
        else if (v.size() != n)
            throw Error(where + ": " + name + " has " + std::to_string(v.size()) + " entries, model expects " +
                        std::to_string(n));
    };
    fit(p.beta, model.num_shape(), "beta");
    fit(p.theta, kThetaSize, "theta");
    fit(p.psi, model.num_expr(), "psi");
    return p;
}

struct FrameSet
{
    std::vector<Frame> train;
    std::vector<Frame> heldout;
    std::vector<TriMesh> train_meshes;
    std::vector<TriMesh> heldout_meshes;
};

std::string frame_name(const char* prefix, std::size_t i)
{
    std::ostringstream s;
    s << prefix << '_' << std::setw(2) << std::setfill('0') << i << ".png";
    return s.str();
}

struct Evaluation
{
    ImageMetrics mean;
    std::vector<ImageMetrics> per_frame;
};

Evaluation evaluate(const RadianceField& field, std::span<const TriMesh> meshes, std::span<const Frame> frames,
                    bool use_mean_embedding, const SceneConfig& scene, const fs::path& dir, const char* prefix,
                    Exec exec)
{
    Evaluation ev;
    RenderOptions ro;
    ro.sampling.n_samples = scene.eval_samples;
    ro.sampling.stratified = false;
    ro.sampling.background = scene.train.sampling.background;
    double mse_sum = 0.0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const PosedField posed(field, meshes[i], use_mean_embedding ? -1 : frames[i].index);
        const Image img = render_image(posed, frames[i].camera, ro, exec);
        write_png(dir / frame_name(prefix, i), img);
        const ImageMetrics m = compare_images(img, frames[i].target);
        ev.per_frame.push_back(m);
        ev.mean.l1 += m.l1;
        ev.mean.ssim += m.ssim;
        mse_sum += mse(img, frames[i].target);
    }
    const double n = static_cast<double>(std::max<std::size_t>(frames.size(), 1));
    ev.mean.l1 /= n;
    ev.mean.ssim /= n;
    // PSNR of the pooled MSE, so a single perfect frame cannot dominate.
    ev.mean.psnr = mse_sum == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(n / mse_sum);
    return ev;
}

json evaluation_json(const Evaluation& ev)
{
    json per = json::array();
    for (const ImageMetrics& m : ev.per_frame)
        per.push_back(metrics_json(m));
    json j = metrics_json(ev.mean);
    j["per_frame"] = per;
    return j;
}

bool same_vertices(const TriMesh& a, const TriMesh& b)
{
    return a.faces == b.faces && a.vertices.size() == b.vertices.size() &&
           std::equal(a.vertices.begin(), a.vertices.end(), b.vertices.begin(),
                      [](const Vec3& x, const Vec3& y) { return x == y; });
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

} // namespace

json run_pipeline(const SceneConfig& scene, const fs::path& out_dir, const PipelineOptions& options)
{
    const Exec exec = options.exec;
    fs::create_directories(out_dir);
    write_json(out_dir / "resolved-config.json", scene_to_json(scene));

    const BlendshapeModel model = stage("template", options, [&] { return build_template_model(scene.template_spec); });
    save_obj(out_dir / "template.obj", model.template_mesh);

    std::optional<AnalyticScene> truth;
    if (scene.truth)
        truth.emplace(*scene.truth, scene.color);

    FrameSet fs_ = stage("frames", options, [&] {
        FrameSet set;
        fs::create_directories(out_dir / "targets");
        if (!scene.frame_files.empty()) {
            for (std::size_t i = 0; i < scene.frame_files.size(); ++i) {
                const FrameFile& ff = scene.frame_files[i];
                Frame f;
                f.target = read_png(ff.image);
                f.camera = ff.camera;
                if (f.target.width != f.camera.width || f.target.height != f.camera.height)
                    throw Error("frame " + std::to_string(i) + ": image size does not match its camera");
                f.params = fit_params(ff.params, model, "frame " + std::to_string(i));
                auto& list = ff.heldout ? set.heldout : set.train;
                f.index = ff.heldout ? -1 : static_cast<int>(set.train.size());
                list.push_back(f);
            }
        } else {
            RenderOptions ro;
            ro.sampling.n_samples = scene.truth_samples;
            ro.sampling.stratified = false;
            ro.sampling.background = scene.train.sampling.background;
            for (bool held : {false, true}) {
                const auto cams = orbit_cameras(scene.trajectory, held);
                for (std::size_t i = 0; i < cams.size(); ++i) {
                    Frame f;
                    f.camera = cams[i];
                    f.params = HeadParams::zeros(model.num_shape(), model.num_expr());
                    f.target = render_image(*truth, cams[i], ro, exec);
                    f.index = held ? -1 : static_cast<int>(i);
                    write_png(out_dir / "targets" / frame_name(held ? "heldout" : "train", i), f.target);
                    (held ? set.heldout : set.train).push_back(std::move(f));
                }
            }
        }
        if (set.train.empty())
            throw Error("no training frames");
        for (const Frame& f : set.train)
            set.train_meshes.push_back(evaluate_model(model, f.params));
        for (const Frame& f : set.heldout)
            set.heldout_meshes.push_back(evaluate_model(model, f.params));
        return set;
    });
    // Without held-out views, report on the training views.
    const bool has_heldout = !fs_.heldout.empty();
    const std::vector<Frame>& eval_frames = has_heldout ? fs_.heldout : fs_.train;

    Aabb box;
    for (const auto* list : {&fs_.train_meshes, &fs_.heldout_meshes})
        for (const TriMesh& m : *list) {
            const Aabb b = m.bounds();
            box.expand(b.min);
            box.expand(b.max);
        }
    // Room for vertices pushed outward by the refinement.
    Aabb bounds = box.dilated(0.15);
    bounds.min.array() -= scene.perturb.ray_extent;
    bounds.max.array() += scene.perturb.ray_extent;

    const int k_train = static_cast<int>(fs_.train.size());
    RadianceField field(scene.field, model.num_vertices(), k_train, bounds, hash_seed(scene.seed, 1));

    json report;
    report["scene"] = scene.name;
    report["seed"] = scene.seed;
    report["num_vertices"] = model.num_vertices();
    report["train_frames"] = k_train;
    report["heldout_frames"] = fs_.heldout.size();
    report["eval_set"] = has_heldout ? "heldout" : "train";

    auto log_progress = [&](const char* phase, int total) {
        return [&options, phase, total](int step, double loss) {
            if (options.log && (step % 100 == 0 || step + 1 == total))
                options.log(std::string(phase) + " step " + std::to_string(step) + " loss " + std::to_string(loss));
        };
    };

    const TrainResult phase1 = stage("phase1-train", options, [&] {
        return train_phase(field, fs_.train_meshes, fs_.train, scene.train, exec, log_progress("phase1", scene.train.steps));
    });
    field.save(out_dir / "field_phase1.bin");
    fs::create_directories(out_dir / "phase1");
    const std::vector<TriMesh>& eval_meshes_p1 = has_heldout ? fs_.heldout_meshes : fs_.train_meshes;
    const Evaluation ev1 = stage("phase1-eval", options, [&] {
        return evaluate(field, eval_meshes_p1, eval_frames, has_heldout, scene, out_dir / "phase1", "eval", exec);
    });
    json p1 = evaluation_json(ev1);
    p1["loss_initial"] = phase1.loss_history.empty() ? json(nullptr) : number_json(phase1.loss_history.front());
    p1["loss_final"] = phase1.loss_history.empty() ? json(nullptr) : number_json(phase1.loss_history.back());
    report["phase1"] = p1;

    bool any_perturb = false;
    for (const Variant& v : scene.variants)
        any_perturb = any_perturb || v.perturb;

    // Refinement of every distinct mesh (template first), shared by variants.
    std::vector<TriMesh> distinct{model.template_mesh};
    std::vector<RefineOutcome> outcomes;
    auto index_of = [&](const TriMesh& m) -> std::size_t {
        for (std::size_t i = 0; i < distinct.size(); ++i)
            if (same_vertices(distinct[i], m))
                return i;
        distinct.push_back(m);
        return distinct.size() - 1;
    };
    std::vector<std::size_t> train_idx, held_idx;
    for (const TriMesh& m : fs_.train_meshes)
        train_idx.push_back(index_of(m));
    for (const TriMesh& m : fs_.heldout_meshes)
        held_idx.push_back(index_of(m));

    stage("refine", options, [&] {
        for (const TriMesh& m : distinct) {
            const FieldDensity density(field, m);
            HeightFieldOptions hf = scene.height_field;
            hf.region = field.grid().bounds;
            outcomes.push_back(refine_mesh(m, density, hf, scene.perturb, scene.smooth, any_perturb, true, exec));
        }
    });

    const RefineOutcome& rest = outcomes.front();
    {
        json r;
        r["meshes_refined"] = distinct.size();
        r["height_field_valid"] = rest.height_field ? rest.height_field->valid_count() : 0;
        r["displaced_vertices"] = rest.displaced_vertices;
        r["max_displacement"] = rest.displacement.rows() ? rest.displacement.rowwise().norm().maxCoeff() : 0.0;
        r["mean_displacement"] = rest.displacement.rows() ? rest.displacement.rowwise().norm().mean() : 0.0;
        r["displacement_energy"] = rest.displacement_energy;
        r["smoothed_energy"] = rest.smoothed_energy;
        report["refinement"] = r;
        if (rest.height_field) {
            save_obj(out_dir / "heightfield.obj", height_field_mesh(*rest.height_field));
            write_voxel_grid(out_dir / "heightfield.vox", height_field_to_voxels(*rest.height_field));
            std::ofstream csv(out_dir / "cross_section.csv");
            write_cross_section(csv, model.template_mesh, apply_refinement(model.template_mesh, rest.displacement),
                                *rest.height_field, scene.cross_section_x, scene.cross_section_half_width);
        }
    }

    std::optional<TriMesh> truth_mesh;
    if (scene.truth && scene.truth->shapes.size() == 1) {
        truth_mesh = shape_surface_mesh(scene.truth->shapes.front(), scene.truth_mesh_subdivisions);
        report["mesh_l2_template"] = mesh_l2_distance(model.template_mesh, *truth_mesh);
    }

    auto variant_mesh = [&](std::size_t idx, const Variant& v) {
        const RefineOutcome& o = outcomes[idx];
        if (!v.perturb)
            return distinct[idx];
        return apply_refinement(distinct[idx], v.smooth ? o.smoothed : o.displacement);
    };

    json variants = json::array();
    for (const Variant& v : scene.variants) {
        const std::string slug = variant_slug(v);
        json vj{{"label", v.label}, {"perturb", v.perturb}, {"smooth", v.smooth}};
        std::vector<TriMesh> train_meshes, held_meshes;
        for (std::size_t i : train_idx)
            train_meshes.push_back(variant_mesh(i, v));
        for (std::size_t i : held_idx)
            held_meshes.push_back(variant_mesh(i, v));
        const TriMesh rest_mesh = variant_mesh(0, v);
        save_obj(out_dir / ("refined_" + slug + ".obj"), rest_mesh);
        const SparseMatrix lap = cotangent_laplacian(model.template_mesh);
        Eigen::MatrixX3d x(rest_mesh.vertices.size(), 3);
        for (std::size_t i = 0; i < rest_mesh.vertices.size(); ++i)
            x.row(static_cast<Eigen::Index>(i)) = (rest_mesh.vertices[i] - model.template_mesh.vertices[i]).transpose();
        vj["laplacian_energy"] = laplacian_energy(lap, x);
        if (truth_mesh)
            vj["mesh_l2"] = mesh_l2_distance(rest_mesh, *truth_mesh);

        RadianceField f2 = scene.cold_start
                               ? RadianceField(scene.field, model.num_vertices(), k_train, bounds, hash_seed(scene.seed, 1))
                               : field;
        const TrainResult r2 = stage("phase2-train " + v.label, options, [&] {
            return train_phase(f2, train_meshes, fs_.train, scene.phase2, exec, log_progress("phase2", scene.phase2.steps));
        });
        fs::create_directories(out_dir / ("phase2_" + slug));
        const Evaluation ev2 = stage("phase2-eval " + v.label, options, [&] {
            return evaluate(f2, has_heldout ? held_meshes : train_meshes, eval_frames, has_heldout, scene,
                            out_dir / ("phase2_" + slug), "eval", exec);
        });
        json p2 = evaluation_json(ev2);
        p2["loss_final"] = r2.loss_history.empty() ? json(nullptr) : number_json(r2.loss_history.back());
        vj["phase2"] = p2;
        variants.push_back(vj);
    }
    report["variants"] = variants;
    if (!variants.empty())
        report["phase2"] = variants.front()["phase2"];
    write_json(out_dir / "report.json", report);
    return report;
}

} // namespace georefine

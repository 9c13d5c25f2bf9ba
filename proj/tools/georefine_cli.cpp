#include "georefine/pipeline.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

using namespace georefine;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals
{
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::string out_dir = "out";
    std::string config;
};

struct CameraArgs
{
    std::string file;
    std::vector<double> eye{0.0, 0.0, 0.4};
    std::vector<double> target{0.0, 0.0, 0.0};
    std::vector<double> up{0.0, 1.0, 0.0};
    int width = 64;
    int height = 64;
    double focal = 110.0;
};

Vec3 vec3(const std::vector<double>& v) { return Vec3(v[0], v[1], v[2]); }

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

void add_camera_options(CLI::App* app, CameraArgs& cam)
{
    app->add_option("--camera", cam.file, "camera JSON {fx, fy, cx, cy, width, height, rotation, position}");
    app->add_option("--eye", cam.eye, "camera position")->expected(3);
    app->add_option("--target", cam.target, "look-at target")->expected(3);
    app->add_option("--up", cam.up, "up vector")->expected(3);
    app->add_option("--width", cam.width, "image width")->check(CLI::PositiveNumber);
    app->add_option("--height", cam.height, "image height")->check(CLI::PositiveNumber);
    app->add_option("--focal", cam.focal, "focal length in pixels")->check(CLI::PositiveNumber);
}

Camera make_camera(const CameraArgs& args)
{
    if (args.file.empty())
        return Camera::look_at(vec3(args.eye), vec3(args.target), vec3(args.up), args.width, args.height, args.focal);
    std::ifstream in(args.file);
    if (!in)
        throw Error("cannot open camera '" + args.file + "'");
    const json j = json::parse(in);
    Camera c;
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    c.width = j.at("width");
    c.height = j.at("height");
    c.position = parse_vec3(j.at("position"), "camera.position");
    for (int r = 0; r < 3; ++r)
        c.rotation.row(r) = parse_vec3(j.at("rotation").at(r), "camera.rotation").transpose();
    c.validate();
    return c;
}

json camera_json(const Camera& c)
{
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
        rot.push_back(vec_json(c.rotation.row(r).transpose()));
    return {{"fx", c.fx},         {"fy", c.fy},           {"cx", c.cx},        {"cy", c.cy},
            {"width", c.width},   {"height", c.height},   {"rotation", rot},   {"position", vec_json(c.position)}};
}

SceneConfig base_config(const Globals& g, bool require_source)
{
    SceneConfig scene;
    if (!g.config.empty())
        scene = load_scene(g.config, require_source);
    else if (require_source)
        throw Error("a scene config is required (--config or positional scene file)");
    if (g.seed) {
        scene.seed = *g.seed;
        scene.train.seed = scene.phase2.seed = *g.seed;
    }
    return scene;
}

void print_metrics(const ImageMetrics& m) { std::cout << metrics_json(m).dump() << '\n'; }

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Geometry-guided latent radiance field head reconstruction"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "random seed (overrides the config)");
    app.add_option("--threads", g.threads, "worker threads (default: all cores)");
    app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();
    app.add_option("--config", g.config, "scene/config JSON; flags override its values");
    bool quiet = false;
    app.add_flag("--quiet", quiet, "suppress progress and warnings");

    // render
    auto* render = app.add_subcommand("render", "render a trained field from a camera to PNG")->fallthrough();
    std::string r_field, r_mesh, r_output = "render.png";
    int r_frame = -1, r_samples = 64;
    bool r_stratified = false;
    CameraArgs r_cam;
    render->add_option("field", r_field, "field file")->required()->check(CLI::ExistingFile);
    render->add_option("mesh", r_mesh, "anchor mesh (OBJ/PLY)")->required()->check(CLI::ExistingFile);
    render->add_option("-o,--output", r_output, "PNG name inside the output directory");
    render->add_option("--frame", r_frame, "frame embedding (-1: mean)");
    render->add_option("--samples", r_samples, "samples per ray")->check(CLI::Range(2, 4096));
    render->add_flag("--stratified", r_stratified, "jitter samples (seeded)");
    add_camera_options(render, r_cam);

    // heightmap
    auto* heightmap = app.add_subcommand("heightmap", "extract the 2.5D height field of a density")->fallthrough();
    std::string h_density, h_field, h_mesh;
    std::vector<int> h_res;
    double h_tau = -1.0, h_x0 = 0.0, h_half = 0.004;
    int h_z = -1;
    heightmap->add_option("density", h_density, "voxel density (.vox); omit with --field")->check(CLI::ExistingFile);
    heightmap->add_option("--field", h_field, "trained field file (density of its mesh)")->check(CLI::ExistingFile);
    heightmap->add_option("--mesh", h_mesh, "anchor mesh for --field; also drawn in the cross-section")
        ->check(CLI::ExistingFile);
    heightmap->add_option("--resolution", h_res, "grid resolution rx ry")->expected(2);
    heightmap->add_option("--tau", h_tau, "transmittance threshold");
    heightmap->add_option("--z-samples", h_z, "marching steps");
    heightmap->add_option("--x0", h_x0, "cross-section slab centre");
    heightmap->add_option("--half-width", h_half, "cross-section slab half width");

    // refine
    auto* refine = app.add_subcommand("refine", "refine a mesh against a density")->fallthrough();
    std::string f_mesh, f_density, f_field, f_output = "refined.obj";
    bool no_perturb = false, no_smooth = false;
    std::optional<double> f_lambda, f_cg_tol, f_extent, f_eps, f_tau;
    std::optional<int> f_iters, f_samples;
    std::vector<int> f_res;
    refine->add_option("mesh", f_mesh, "input mesh (OBJ/PLY)")->required()->check(CLI::ExistingFile);
    refine->add_option("density", f_density, "voxel density (.vox); omit with --field")->check(CLI::ExistingFile);
    refine->add_option("--field", f_field, "trained field file, anchored on the input mesh")->check(CLI::ExistingFile);
    refine->add_option("-o,--output", f_output, "OBJ name inside the output directory");
    refine->add_flag("--no-perturb", no_perturb, "skip the SDF perturbation");
    refine->add_flag("--no-smooth", no_smooth, "skip Laplacian smoothing");
    refine->add_option("--lambda", f_lambda, "smoothing strength");
    refine->add_option("--smooth-iters", f_iters, "implicit smoothing passes");
    refine->add_option("--cg-tol", f_cg_tol, "CG relative tolerance");
    refine->add_option("--samples", f_samples, "perturbation samples per vertex");
    refine->add_option("--ray-extent", f_extent, "maximum displacement along the normal");
    refine->add_option("--epsilon", f_eps, "SDF acceptance threshold");
    refine->add_option("--tau", f_tau, "height-field transmittance threshold");
    refine->add_option("--resolution", f_res, "height-field resolution rx ry")->expected(2);

    // train
    auto* train = app.add_subcommand("train", "phase-one training on a scene")->fallthrough();
    std::string t_scene;
    std::optional<int> t_steps, t_rays;
    train->add_option("scene", t_scene, "scene JSON (alternatively --config)")->check(CLI::ExistingFile);
    train->add_option("--steps", t_steps, "training steps");
    train->add_option("--rays", t_rays, "rays per step");

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "full two-phase run")->fallthrough();
    std::string p_scene;
    bool p_no_perturb = false, p_no_smooth = false, p_cold = false;
    std::optional<int> p_steps, p_steps2;
    pipeline->add_option("scene", p_scene, "scene JSON (alternatively --config)")->check(CLI::ExistingFile);
    pipeline->add_flag("--no-perturb", p_no_perturb, "ablation: no perturbation");
    pipeline->add_flag("--no-smooth", p_no_smooth, "ablation: no smoothing");
    pipeline->add_flag("--cold-start", p_cold, "re-initialise the field for phase two");
    pipeline->add_option("--steps", p_steps, "phase-one steps");
    pipeline->add_option("--phase2-steps", p_steps2, "phase-two steps");

    // metrics
    auto* metrics = app.add_subcommand("metrics", "compare two PNG images")->fallthrough();
    std::string m_a, m_b;
    metrics->add_option("rendered", m_a, "first image")->required()->check(CLI::ExistingFile);
    metrics->add_option("target", m_b, "second image")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }
    if (seed_opt->count())
        g.seed = seed_value;
    set_num_threads(g.threads);
    set_warnings_enabled(!quiet);
    auto log = [quiet](const std::string& s) {
        if (!quiet)
            std::cerr << s << '\n';
    };

    try {
        const fs::path out(g.out_dir);
        fs::create_directories(out);
        json resolved{{"seed", g.seed ? json(*g.seed) : json(nullptr)}, {"threads", g.threads}, {"out_dir", g.out_dir}};

        if (*metrics) {
            resolved["command"] = "metrics";
            resolved["rendered"] = m_a;
            resolved["target"] = m_b;
            write_json(out / "resolved-config.json", resolved);
            print_metrics(compare_images(read_png(m_a), read_png(m_b)));
            return 0;
        }

        if (*render) {
            const RadianceField field = RadianceField::load(r_field);
            const TriMesh mesh = load_mesh(r_mesh);
            const Camera cam = make_camera(r_cam);
            RenderOptions ro;
            ro.sampling.n_samples = r_samples;
            ro.sampling.stratified = r_stratified;
            ro.seed = g.seed.value_or(0);
            resolved["command"] = "render";
            resolved["field"] = r_field;
            resolved["mesh"] = r_mesh;
            resolved["frame"] = r_frame;
            resolved["samples"] = r_samples;
            resolved["stratified"] = r_stratified;
            resolved["camera"] = camera_json(cam);
            resolved["output"] = r_output;
            write_json(out / "resolved-config.json", resolved);
            const PosedField posed(field, mesh, r_frame);
            write_png(out / r_output, render_image(posed, cam, ro));
            return 0;
        }

        if (*heightmap) {
            SceneConfig scene = base_config(g, false);
            HeightFieldOptions opts = scene.height_field;
            if (!h_res.empty()) {
                opts.rx = h_res[0];
                opts.ry = h_res[1];
            }
            if (h_tau > 0.0)
                opts.tau = h_tau;
            if (h_z > 0)
                opts.z_samples = h_z;
            std::unique_ptr<DensitySource> density;
            std::optional<RadianceField> field;
            std::optional<TriMesh> mesh;
            if (!h_mesh.empty())
                mesh = load_mesh(h_mesh);
            if (!h_field.empty()) {
                if (!mesh)
                    throw Error("--field needs --mesh to anchor the latent codes");
                field = RadianceField::load(h_field);
                density = std::make_unique<FieldDensity>(*field, *mesh);
            } else if (!h_density.empty()) {
                density = std::make_unique<GridDensity>(read_voxel_grid(h_density));
            } else {
                throw Error("heightmap needs a density file or --field");
            }
            resolved["command"] = "heightmap";
            resolved["density"] = h_density;
            resolved["field"] = h_field;
            resolved["mesh"] = h_mesh;
            resolved["height_field"] = {{"resolution", {opts.rx, opts.ry}},
                                        {"tau", opts.tau},
                                        {"z_samples", opts.z_samples},
                                        {"frontal", vec_json(opts.frontal)}};
            resolved["cross_section"] = {{"x", h_x0}, {"half_width", h_half}};
            write_json(out / "resolved-config.json", resolved);
            const HeightField hf = extract_height_field(*density, opts);
            write_voxel_grid(out / "heightfield.vox", height_field_to_voxels(hf));
            save_obj(out / "heightfield.obj", height_field_mesh(hf));
            std::ofstream csv(out / "cross_section.csv");
            const TriMesh none;
            write_cross_section(csv, mesh ? *mesh : none, none, hf, h_x0, h_half);
            log("height field: " + std::to_string(hf.valid_count()) + " of " + std::to_string(hf.depth.size()) +
                " columns hit the surface");
            return 0;
        }

        if (*refine) {
            SceneConfig scene = base_config(g, false);
            if (f_lambda)
                scene.smooth.lambda = *f_lambda;
            if (f_iters)
                scene.smooth.iterations = *f_iters;
            if (f_cg_tol)
                scene.smooth.cg_tol = *f_cg_tol;
            if (f_samples)
                scene.perturb.samples = *f_samples;
            if (f_extent)
                scene.perturb.ray_extent = *f_extent;
            if (f_eps)
                scene.perturb.epsilon = *f_eps;
            if (f_tau)
                scene.height_field.tau = *f_tau;
            if (!f_res.empty()) {
                scene.height_field.rx = f_res[0];
                scene.height_field.ry = f_res[1];
            }
            scene.perturb.validate();
            scene.smooth.validate();
            const TriMesh mesh = load_mesh(f_mesh);
            std::unique_ptr<DensitySource> density;
            std::optional<RadianceField> field;
            if (!f_field.empty()) {
                field = RadianceField::load(f_field);
                density = std::make_unique<FieldDensity>(*field, mesh);
            } else if (!f_density.empty()) {
                density = std::make_unique<GridDensity>(read_voxel_grid(f_density));
            } else if (!no_perturb) {
                throw Error("refine needs a density file or --field");
            }
            json cfg = scene_to_json(scene)["refine"];
            resolved["command"] = "refine";
            resolved["mesh"] = f_mesh;
            resolved["density"] = f_density;
            resolved["field"] = f_field;
            resolved["perturb"] = !no_perturb;
            resolved["smooth"] = !no_smooth;
            resolved["refine"] = cfg;
            resolved["output"] = f_output;
            write_json(out / "resolved-config.json", resolved);
            if (no_perturb && no_smooth && !density) {
                save_obj(out / f_output, mesh);
                return 0;
            }
            const RefineOutcome r = refine_mesh(mesh, *density, scene.height_field, scene.perturb, scene.smooth,
                                                !no_perturb, !no_smooth);
            save_obj(out / f_output, r.refined);
            if (r.height_field) {
                std::ofstream csv(out / "cross_section.csv");
                write_cross_section(csv, mesh, apply_refinement(mesh, r.displacement), *r.height_field, 0.0, 0.004);
            }
            json summary{{"displaced_vertices", r.displaced_vertices},
                         {"displacement_energy", r.displacement_energy},
                         {"smoothed_energy", r.smoothed_energy}};
            std::cout << summary.dump() << '\n';
            return 0;
        }

        if (*train || *pipeline) {
            const std::string& scene_file = *train ? t_scene : p_scene;
            if (!scene_file.empty())
                g.config = scene_file;
            SceneConfig scene = base_config(g, true);
            if (*train) {
                if (t_steps)
                    scene.train.steps = *t_steps;
                if (t_rays)
                    scene.train.rays_per_step = *t_rays;
                scene.train.validate();
                // Training alone: phase one with no refinement variants.
                scene.variants.clear();
                resolved["command"] = "train";
            } else {
                if (p_steps)
                    scene.train.steps = *p_steps;
                if (p_steps2)
                    scene.phase2.steps = *p_steps2;
                if (p_cold)
                    scene.cold_start = true;
                if (p_no_perturb || p_no_smooth)
                    scene.variants = {variant_from_flags(!p_no_perturb, !p_no_smooth)};
                resolved["command"] = "pipeline";
            }
            resolved["scene"] = scene_to_json(scene);
            PipelineOptions po;
            po.log = log;
            const json report = run_pipeline(scene, out, po);
            // run_pipeline writes the scene; the CLI record adds the invocation.
            write_json(out / "resolved-config.json", resolved);
            if (*pipeline)
                std::cout << json{{"phase1", report.at("phase1").at("psnr")},
                                  {"phase2", report.contains("phase2") ? report["phase2"]["psnr"] : json(nullptr)}}
                                 .dump()
                          << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

#include "georefine/scene.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <numbers>

namespace georefine {

using nlohmann::json;

Vec3 ColorSpec::albedo(const Vec3& q) const
{
    const double pattern = std::sin(frequency * q.x()) * std::sin(frequency * q.y() + 0.5 * frequency * q.z());
    return (base + amplitude * pattern * Vec3(1.0, 0.8, 0.6)).cwiseMax(0.0).cwiseMin(1.0);
}

AnalyticScene::AnalyticScene(ShapeSpec shape, ColorSpec color) : density_(std::move(shape)), color_(color)
{
    color_.light.normalize();
}

Vec3 AnalyticScene::color(const Vec3& q) const
{
    const ShapeSpec& s = density_.spec();
    constexpr double h = 1e-4;
    Vec3 g;
    for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        g[a] = s.sdf(q + e) - s.sdf(q - e);
    }
    const double len = g.norm();
    const double lambert = len > 0.0 ? std::max(0.0, g.dot(color_.light) / len) : 0.0;
    return color_.albedo(q) * (color_.ambient + (1.0 - color_.ambient) * lambert);
}

void AnalyticScene::evaluate(std::span<const Vec3> points, const Vec3&, std::span<double> sigma,
                             std::span<Vec3> rgb) const
{
    for (std::size_t i = 0; i < points.size(); ++i) {
        sigma[i] = density_.density(points[i]);
        rgb[i] = sigma[i] > 0.0 ? color(points[i]) : Vec3::Zero();
    }
}

TriMesh shape_surface_mesh(const ShapePrimitive& shape, int subdivisions)
{
    TriMesh mesh = make_icosphere(subdivisions, 1.0);
    for (Vec3& v : mesh.vertices) {
        const Vec3 u = v.normalized();
        double r = 0.0;
        switch (shape.kind) {
        case ShapePrimitive::Kind::Sphere:
            r = shape.radius;
            break;
        case ShapePrimitive::Kind::Ellipsoid:
            r = 1.0 / u.cwiseQuotient(shape.radii).norm();
            break;
        case ShapePrimitive::Kind::BumpySphere:
            r = shape.radius_along(u);
            break;
        }
        v = shape.center + r * u;
    }
    return mesh;
}

std::vector<Camera> orbit_cameras(const TrajectorySpec& spec, bool heldout)
{
    const int n = heldout ? spec.heldout_frames : spec.train_frames;
    const Eigen::Matrix3d to_world = frontal_frame(spec.frontal).transpose();
    const double yaw = spec.yaw_deg * std::numbers::pi / 180.0;
    const double pitch = spec.pitch_deg * std::numbers::pi / 180.0;
    std::vector<Camera> cams;
    for (int i = 0; i < n; ++i) {
        // Training views include both ends of the arc; held-out views are
        // offset by half a slot.
        const double s = heldout ? (i + 0.5) / n : (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5);
        const double a = -yaw + 2.0 * yaw * s;
        const double b = pitch * std::sin(2.0 * std::numbers::pi * s + (heldout ? 1.0 : 0.0));
        const Vec3 dir_local(std::sin(a) * std::cos(b), std::sin(b), std::cos(a) * std::cos(b));
        const Vec3 eye = spec.target + spec.distance * (to_world * dir_local);
        cams.push_back(Camera::look_at(eye, spec.target, to_world * Vec3::UnitY(), spec.width, spec.height, spec.focal));
    }
    return cams;
}

Variant variant_from_flags(bool perturb, bool smooth)
{
    Variant v;
    v.perturb = perturb;
    v.smooth = smooth;
    v.label = perturb ? (smooth ? "full" : "w/o Smo.") : (smooth ? "w/o Per." : "w/o Per. + Smo.");
    return v;
}

Variant variant_from_label(const std::string& label)
{
    for (bool p : {true, false})
        for (bool s : {true, false}) {
            Variant v = variant_from_flags(p, s);
            if (v.label == label || variant_slug(v) == label)
                return v;
        }
    throw Error("unknown variant '" + label + "' (expected full, w/o Smo., w/o Per., w/o Per. + Smo.)");
}

std::string variant_slug(const Variant& v)
{
    if (v.perturb)
        return v.smooth ? "full" : "no_smooth";
    return v.smooth ? "no_perturb" : "no_perturb_no_smooth";
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json number_json(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    return v;
}

Vec3 parse_vec3(const json& j, const std::string& where)
{
    if (!j.is_array() || j.size() != 3)
        throw ParseError(where + ": expected an array of 3 numbers");
    Vec3 v;
    for (int a = 0; a < 3; ++a) {
        if (!j[a].is_number())
            throw ParseError(where + ": expected an array of 3 numbers");
        v[a] = j[a].get<double>();
    }
    return v;
}

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed)
{
    if (!j.is_object())
        throw ParseError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            ok = ok || it.key() == a;
        if (!ok)
            throw ParseError(where + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key))
        return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParseError(where + "." + key + ": wrong type");
    }
}

void read_vec(const json& j, const char* key, Vec3& out, const std::string& where)
{
    if (j.contains(key))
        out = parse_vec3(j.at(key), where + "." + key);
}

const char* kind_name(ShapePrimitive::Kind k)
{
    switch (k) {
    case ShapePrimitive::Kind::Sphere:
        return "sphere";
    case ShapePrimitive::Kind::Ellipsoid:
        return "ellipsoid";
    case ShapePrimitive::Kind::BumpySphere:
        return "bumpy_sphere";
    }
    return "sphere";
}

ShapeSpec parse_truth(const json& j, const std::string& where)
{
    check_keys(j, where, {"sigma_max", "softness", "shapes"});
    ShapeSpec s;
    read(j, "sigma_max", s.sigma_max, where);
    read(j, "softness", s.softness, where);
    if (!j.contains("shapes") || !j["shapes"].is_array() || j["shapes"].empty())
        throw ParseError(where + ".shapes: expected a non-empty array");
    for (std::size_t i = 0; i < j["shapes"].size(); ++i) {
        const json& sj = j["shapes"][i];
        const std::string w = where + ".shapes[" + std::to_string(i) + "]";
        check_keys(sj, w, {"kind", "center", "radius", "radii", "bumps"});
        ShapePrimitive p;
        std::string kind = "sphere";
        read(sj, "kind", kind, w);
        if (kind == "sphere")
            p.kind = ShapePrimitive::Kind::Sphere;
        else if (kind == "ellipsoid")
            p.kind = ShapePrimitive::Kind::Ellipsoid;
        else if (kind == "bumpy_sphere")
            p.kind = ShapePrimitive::Kind::BumpySphere;
        else
            throw ParseError(w + ".kind: unknown shape '" + kind + "'");
        read_vec(sj, "center", p.center, w);
        read(sj, "radius", p.radius, w);
        read_vec(sj, "radii", p.radii, w);
        if (sj.contains("bumps")) {
            for (std::size_t b = 0; b < sj["bumps"].size(); ++b) {
                const json& bj = sj["bumps"][b];
                const std::string bw = w + ".bumps[" + std::to_string(b) + "]";
                check_keys(bj, bw, {"direction", "amplitude", "sharpness"});
                Bump bump;
                read_vec(bj, "direction", bump.direction, bw);
                if (!(bump.direction.norm() > 0.0))
                    throw ParseError(bw + ".direction: must be non-zero");
                bump.direction.normalize();
                read(bj, "amplitude", bump.amplitude, bw);
                read(bj, "sharpness", bump.sharpness, bw);
                p.bumps.push_back(bump);
            }
        }
        s.shapes.push_back(p);
    }
    if (!(s.softness > 0.0) || !(s.sigma_max >= 0.0))
        throw ParseError(where + ": softness must be positive and sigma_max non-negative");
    return s;
}

json truth_json(const ShapeSpec& s)
{
    json shapes = json::array();
    for (const ShapePrimitive& p : s.shapes) {
        json bumps = json::array();
        for (const Bump& b : p.bumps)
            bumps.push_back({{"direction", vec_json(b.direction)}, {"amplitude", b.amplitude}, {"sharpness", b.sharpness}});
        shapes.push_back({{"kind", kind_name(p.kind)},
                          {"center", vec_json(p.center)},
                          {"radius", p.radius},
                          {"radii", vec_json(p.radii)},
                          {"bumps", bumps}});
    }
    return {{"sigma_max", s.sigma_max}, {"softness", s.softness}, {"shapes", shapes}};
}

void parse_train(const json& j, const std::string& where, TrainConfig& t)
{
    check_keys(j, where,
               {"lr", "adam_beta1", "adam_beta2", "adam_eps", "rays_per_step", "steps", "seed", "samples", "stratified",
                "background", "chunks"});
    read(j, "lr", t.lr, where);
    read(j, "adam_beta1", t.adam_beta1, where);
    read(j, "adam_beta2", t.adam_beta2, where);
    read(j, "adam_eps", t.adam_eps, where);
    read(j, "rays_per_step", t.rays_per_step, where);
    read(j, "steps", t.steps, where);
    read(j, "seed", t.seed, where);
    read(j, "samples", t.sampling.n_samples, where);
    read(j, "stratified", t.sampling.stratified, where);
    read_vec(j, "background", t.sampling.background, where);
    read(j, "chunks", t.chunks, where);
    try {
        t.validate();
    } catch (const Error& e) {
        throw ParseError(where + ": " + e.what());
    }
}

json train_json(const TrainConfig& t)
{
    return {{"lr", t.lr},
            {"adam_beta1", t.adam_beta1},
            {"adam_beta2", t.adam_beta2},
            {"adam_eps", t.adam_eps},
            {"rays_per_step", t.rays_per_step},
            {"steps", t.steps},
            {"seed", t.seed},
            {"samples", t.sampling.n_samples},
            {"stratified", t.sampling.stratified},
            {"background", vec_json(t.sampling.background)},
            {"chunks", t.chunks}};
}

Camera parse_camera(const json& j, const std::string& where)
{
    check_keys(j, where, {"fx", "fy", "cx", "cy", "width", "height", "rotation", "position"});
    Camera c;
    read(j, "fx", c.fx, where);
    read(j, "fy", c.fy, where);
    read(j, "cx", c.cx, where);
    read(j, "cy", c.cy, where);
    read(j, "width", c.width, where);
    read(j, "height", c.height, where);
    read_vec(j, "position", c.position, where);
    if (j.contains("rotation")) {
        const json& r = j["rotation"];
        if (!r.is_array() || r.size() != 3)
            throw ParseError(where + ".rotation: expected 3 rows");
        for (int row = 0; row < 3; ++row)
            c.rotation.row(row) = parse_vec3(r[row], where + ".rotation").transpose();
    }
    try {
        c.validate();
    } catch (const Error& e) {
        throw ParseError(where + ": " + e.what());
    }
    return c;
}

json camera_json(const Camera& c)
{
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
        rot.push_back(vec_json(c.rotation.row(r).transpose()));
    return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width},
            {"height", c.height}, {"rotation", rot}, {"position", vec_json(c.position)}};
}

Eigen::VectorXd parse_vector(const json& j, const std::string& where)
{
    if (!j.is_array())
        throw ParseError(where + ": expected an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number())
            throw ParseError(where + ": expected numbers");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p)
{
    std::filesystem::path path(p);
    if (!path.is_absolute())
        path = std::filesystem::absolute(base / path);
    return path.lexically_normal();
}

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

} // namespace

SceneConfig parse_scene(const json& j, const std::filesystem::path& base_dir, bool require_source)
{
    check_keys(j, "scene",
               {"name", "seed", "truth", "color", "template", "trajectory", "frames", "field", "train", "phase2",
                "refine", "eval", "variants", "cross_section"});
    SceneConfig s;
    read(j, "name", s.name, "scene");
    read(j, "seed", s.seed, "scene");
    s.train.seed = s.seed;
    if (j.contains("truth") && !j["truth"].is_null())
        s.truth = parse_truth(j["truth"], "scene.truth");
    if (j.contains("color")) {
        const json& c = j["color"];
        check_keys(c, "scene.color", {"base", "amplitude", "frequency", "light", "ambient"});
        read_vec(c, "base", s.color.base, "scene.color");
        read(c, "amplitude", s.color.amplitude, "scene.color");
        read(c, "frequency", s.color.frequency, "scene.color");
        read_vec(c, "light", s.color.light, "scene.color");
        if (!(s.color.light.norm() > 0.0))
            throw ParseError("scene.color.light: must be non-zero");
        read(c, "ambient", s.color.ambient, "scene.color");
    }
    if (j.contains("template")) {
        const json& t = j["template"];
        check_keys(t, "scene.template", {"kind", "subdivisions", "seed", "path"});
        read(t, "kind", s.template_spec.kind, "scene.template");
        read(t, "subdivisions", s.template_spec.subdivisions, "scene.template");
        read(t, "seed", s.template_spec.seed, "scene.template");
        std::string p;
        read(t, "path", p, "scene.template");
        if (!p.empty())
            s.template_spec.path = resolve_path(base_dir, p);
        if (s.template_spec.kind != "synthetic" && s.template_spec.kind != "mesh" && s.template_spec.kind != "manifest")
            throw ParseError("scene.template.kind: expected synthetic, mesh or manifest");
        if (s.template_spec.kind != "synthetic" && s.template_spec.path.empty())
            throw ParseError("scene.template.path: required for kind '" + s.template_spec.kind + "'");
    }
    if (j.contains("trajectory")) {
        const json& t = j["trajectory"];
        const std::string w = "scene.trajectory";
        check_keys(t, w,
                   {"train_frames", "heldout_frames", "width", "height", "focal", "distance", "yaw_deg", "pitch_deg",
                    "target", "frontal"});
        read(t, "train_frames", s.trajectory.train_frames, w);
        read(t, "heldout_frames", s.trajectory.heldout_frames, w);
        read(t, "width", s.trajectory.width, w);
        read(t, "height", s.trajectory.height, w);
        read(t, "focal", s.trajectory.focal, w);
        read(t, "distance", s.trajectory.distance, w);
        read(t, "yaw_deg", s.trajectory.yaw_deg, w);
        read(t, "pitch_deg", s.trajectory.pitch_deg, w);
        read_vec(t, "target", s.trajectory.target, w);
        read_vec(t, "frontal", s.trajectory.frontal, w);
        if (s.trajectory.train_frames < 1 || s.trajectory.heldout_frames < 0)
            throw ParseError(w + ": need at least one training frame");
    }
    if (j.contains("frames")) {
        const json& fl = j["frames"];
        if (!fl.is_array())
            throw ParseError("scene.frames: expected an array");
        for (std::size_t i = 0; i < fl.size(); ++i) {
            const std::string w = "scene.frames[" + std::to_string(i) + "]";
            check_keys(fl[i], w, {"image", "camera", "heldout", "beta", "theta", "psi"});
            FrameFile f;
            std::string img;
            read(fl[i], "image", img, w);
            if (img.empty())
                throw ParseError(w + ".image: required");
            f.image = resolve_path(base_dir, img);
            if (!fl[i].contains("camera"))
                throw ParseError(w + ".camera: required");
            f.camera = parse_camera(fl[i]["camera"], w + ".camera");
            read(fl[i], "heldout", f.heldout, w);
            if (fl[i].contains("beta"))
                f.params.beta = parse_vector(fl[i]["beta"], w + ".beta");
            if (fl[i].contains("theta"))
                f.params.theta = parse_vector(fl[i]["theta"], w + ".theta");
            if (fl[i].contains("psi"))
                f.params.psi = parse_vector(fl[i]["psi"], w + ".psi");
            s.frame_files.push_back(f);
        }
    }
    if (j.contains("field")) {
        const json& f = j["field"];
        const std::string w = "scene.field";
        check_keys(f, w,
                   {"latent_dim", "hidden_width", "hidden_layers", "embed_dim", "position_freqs", "direction_freqs",
                    "resolution", "blur_passes", "blur", "latent_init", "sigma_bias", "density_scale"});
        read(f, "latent_dim", s.field.latent_dim, w);
        read(f, "hidden_width", s.field.hidden_width, w);
        read(f, "hidden_layers", s.field.hidden_layers, w);
        read(f, "embed_dim", s.field.embed_dim, w);
        read(f, "position_freqs", s.field.position_freqs, w);
        read(f, "direction_freqs", s.field.direction_freqs, w);
        read(f, "resolution", s.field.resolution, w);
        read(f, "blur_passes", s.field.blur_passes, w);
        if (f.contains("blur")) {
            try {
                s.field.blur = parse_blur_mode(f["blur"].get<std::string>());
            } catch (const std::exception& e) {
                throw ParseError(w + ".blur: " + e.what());
            }
        }
        read(f, "latent_init", s.field.latent_init, w);
        read(f, "sigma_bias", s.field.sigma_bias, w);
        read(f, "density_scale", s.field.density_scale, w);
        try {
            s.field.validate();
        } catch (const Error& e) {
            throw ParseError(w + ": " + e.what());
        }
    }
    if (j.contains("train"))
        parse_train(j["train"], "scene.train", s.train);
    s.phase2 = s.train;
    if (j.contains("phase2")) {
        json p = j["phase2"];
        if (p.contains("cold_start")) {
            read(p, "cold_start", s.cold_start, "scene.phase2");
            p.erase("cold_start");
        }
        parse_train(p, "scene.phase2", s.phase2);
    }
    if (j.contains("refine")) {
        const json& r = j["refine"];
        check_keys(r, "scene.refine", {"height_field", "perturb", "smooth", "frontal"});
        read_vec(r, "frontal", s.perturb.frontal, "scene.refine");
        if (!(s.perturb.frontal.norm() > 0.0))
            throw ParseError("scene.refine.frontal: must be non-zero");
        s.perturb.frontal.normalize();
        if (r.contains("height_field")) {
            const json& h = r["height_field"];
            const std::string w = "scene.refine.height_field";
            check_keys(h, w, {"resolution", "tau", "z_samples"});
            if (h.contains("resolution")) {
                const json& res = h["resolution"];
                if (!res.is_array() || res.size() != 2)
                    throw ParseError(w + ".resolution: expected [rx, ry]");
                s.height_field.rx = res[0].get<int>();
                s.height_field.ry = res[1].get<int>();
            }
            read(h, "tau", s.height_field.tau, w);
            read(h, "z_samples", s.height_field.z_samples, w);
        }
        if (r.contains("perturb")) {
            const json& p = r["perturb"];
            const std::string w = "scene.refine.perturb";
            check_keys(p, w, {"samples", "ray_extent", "epsilon"});
            read(p, "samples", s.perturb.samples, w);
            read(p, "ray_extent", s.perturb.ray_extent, w);
            if (p.contains("epsilon") && !p["epsilon"].is_null())
                s.perturb.epsilon = p["epsilon"].get<double>();
        }
        if (r.contains("smooth")) {
            const json& m = r["smooth"];
            const std::string w = "scene.refine.smooth";
            check_keys(m, w, {"lambda", "iterations", "cg_tol", "cg_max_iter"});
            read(m, "lambda", s.smooth.lambda, w);
            read(m, "iterations", s.smooth.iterations, w);
            read(m, "cg_tol", s.smooth.cg_tol, w);
            read(m, "cg_max_iter", s.smooth.cg_max_iter, w);
        }
    }
    s.height_field.frontal = s.perturb.frontal;
    try {
        s.perturb.validate();
        s.smooth.validate();
    } catch (const Error& e) {
        throw ParseError(std::string("scene.refine: ") + e.what());
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, "scene.eval", {"samples", "truth_samples", "truth_mesh_subdivisions"});
        read(e, "samples", s.eval_samples, "scene.eval");
        read(e, "truth_samples", s.truth_samples, "scene.eval");
        read(e, "truth_mesh_subdivisions", s.truth_mesh_subdivisions, "scene.eval");
        if (s.eval_samples < 2 || s.truth_samples < 2)
            throw ParseError("scene.eval: sample counts must be at least 2");
    }
    if (j.contains("variants")) {
        s.variants.clear();
        for (const json& v : j["variants"]) {
            if (!v.is_string())
                throw ParseError("scene.variants: expected labels");
            try {
                s.variants.push_back(variant_from_label(v.get<std::string>()));
            } catch (const Error& e) {
                throw ParseError(std::string("scene.variants: ") + e.what());
            }
        }
    }
    if (j.contains("cross_section")) {
        const json& c = j["cross_section"];
        check_keys(c, "scene.cross_section", {"x", "half_width"});
        read(c, "x", s.cross_section_x, "scene.cross_section");
        read(c, "half_width", s.cross_section_half_width, "scene.cross_section");
    }
    if (require_source && !s.truth && s.frame_files.empty())
        throw ParseError("scene: needs either a truth shape or a frame list");
    return s;
}

SceneConfig load_scene(const std::filesystem::path& path, bool require_source)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open scene '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("'" + path.string() + "': " + e.what());
    }
    return parse_scene(j, path.parent_path(), require_source);
}

json scene_to_json(const SceneConfig& s)
{
    json j;
    j["name"] = s.name;
    j["seed"] = s.seed;
    j["truth"] = s.truth ? truth_json(*s.truth) : json(nullptr);
    j["color"] = {{"base", vec_json(s.color.base)},
                  {"amplitude", s.color.amplitude},
                  {"frequency", s.color.frequency},
                  {"light", vec_json(s.color.light)},
                  {"ambient", s.color.ambient}};
    j["template"] = {{"kind", s.template_spec.kind},
                     {"subdivisions", s.template_spec.subdivisions},
                     {"seed", s.template_spec.seed},
                     {"path", s.template_spec.path.string()}};
    const TrajectorySpec& t = s.trajectory;
    j["trajectory"] = {{"train_frames", t.train_frames}, {"heldout_frames", t.heldout_frames},
                       {"width", t.width},               {"height", t.height},
                       {"focal", t.focal},               {"distance", t.distance},
                       {"yaw_deg", t.yaw_deg},           {"pitch_deg", t.pitch_deg},
                       {"target", vec_json(t.target)},   {"frontal", vec_json(t.frontal)}};
    if (!s.frame_files.empty()) {
        json frames = json::array();
        for (const FrameFile& f : s.frame_files) {
            json fj{{"image", f.image.string()}, {"camera", camera_json(f.camera)}, {"heldout", f.heldout}};
            if (f.params.beta.size())
                fj["beta"] = vector_json(f.params.beta);
            if (f.params.theta.size())
                fj["theta"] = vector_json(f.params.theta);
            if (f.params.psi.size())
                fj["psi"] = vector_json(f.params.psi);
            frames.push_back(fj);
        }
        j["frames"] = frames;
    }
    const FieldConfig& f = s.field;
    j["field"] = {{"latent_dim", f.latent_dim},       {"hidden_width", f.hidden_width},
                  {"hidden_layers", f.hidden_layers}, {"embed_dim", f.embed_dim},
                  {"position_freqs", f.position_freqs}, {"direction_freqs", f.direction_freqs},
                  {"resolution", f.resolution},       {"blur_passes", f.blur_passes},
                  {"latent_init", f.latent_init},     {"sigma_bias", f.sigma_bias},
                  {"density_scale", f.density_scale}, {"blur", blur_mode_name(f.blur)}};
    j["train"] = train_json(s.train);
    j["phase2"] = train_json(s.phase2);
    j["phase2"]["cold_start"] = s.cold_start;
    j["refine"] = {
        {"frontal", vec_json(s.perturb.frontal)},
        {"height_field",
         {{"resolution", {s.height_field.rx, s.height_field.ry}},
          {"tau", s.height_field.tau},
          {"z_samples", s.height_field.z_samples}}},
        {"perturb",
         {{"samples", s.perturb.samples},
          {"ray_extent", s.perturb.ray_extent},
          {"epsilon", s.perturb.epsilon ? json(*s.perturb.epsilon) : json(nullptr)}}},
        {"smooth",
         {{"lambda", s.smooth.lambda},
          {"iterations", s.smooth.iterations},
          {"cg_tol", s.smooth.cg_tol},
          {"cg_max_iter", s.smooth.cg_max_iter}}},
    };
    j["eval"] = {{"samples", s.eval_samples},
                 {"truth_samples", s.truth_samples},
                 {"truth_mesh_subdivisions", s.truth_mesh_subdivisions}};
    json variants = json::array();
    for (const Variant& v : s.variants)
        variants.push_back(v.label);
    j["variants"] = variants;
    j["cross_section"] = {{"x", s.cross_section_x}, {"half_width", s.cross_section_half_width}};
    return j;
}

} // namespace georefine

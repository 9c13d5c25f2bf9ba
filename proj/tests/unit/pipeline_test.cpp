#include "doctest.h"
#include "helpers.hpp"

#include "georefine/pipeline.hpp"

#include <fstream>

using namespace georefine;
using nlohmann::json;

namespace {

SceneConfig tiny_scene()
{
    return load_scene(std::filesystem::path(GEOREFINE_SCENES) / "tiny_sphere.json");
}

} // namespace

TEST_CASE("variant labels round trip")
{
    CHECK(variant_from_flags(true, true).label == "full");
    CHECK(variant_from_flags(true, false).label == "w/o Smo.");
    CHECK(variant_from_flags(false, true).label == "w/o Per.");
    CHECK(variant_from_flags(false, false).label == "w/o Per. + Smo.");
    for (const char* l : {"full", "w/o Smo.", "w/o Per.", "w/o Per. + Smo."})
        CHECK(variant_from_label(l).label == l);
    CHECK(variant_from_label("w/o Smo.").perturb);
    CHECK_FALSE(variant_from_label("w/o Smo.").smooth);
    CHECK_THROWS_AS(variant_from_label("nope"), Error);
}

TEST_CASE("scene parsing rejects unknown keys with their path")
{
    json j = json::parse(R"({"name": "x", "field": {"hidden_widht": 3}})");
    try {
        parse_scene(j, {}, false);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("scene.field") != std::string::npos);
        CHECK(std::string(e.what()).find("hidden_widht") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_scene(json::parse(R"({"field": {"blur": "gauss"}})"), {}, false), Error);
    CHECK_THROWS_AS(parse_scene(json::parse(R"({"name": "x"})")), Error);
    CHECK_THROWS_AS(parse_scene(json::parse(R"({"variants": ["w/o everything"]})"), {}, false), Error);
}

TEST_CASE("resolved scene config round trips")
{
    SceneConfig s = tiny_scene();
    CHECK(s.field.blur == BlurMode::Box);
    const json once = scene_to_json(s);
    const json twice = scene_to_json(parse_scene(once));
    CHECK(once == twice);
    CHECK(once["field"]["blur"] == "box");
}

TEST_CASE("refine_mesh with perturbation off returns the mesh unchanged")
{
    TriMesh mesh = make_icosphere(2, 0.08);
    ShapePrimitive sphere;
    sphere.radius = 0.09;
    AnalyticDensity density(ShapeSpec{{sphere}});
    HeightFieldOptions hf;
    hf.rx = hf.ry = 32;
    hf.z_samples = 64;
    RefineOutcome r = refine_mesh(mesh, density, hf, PerturbConfig{}, SmoothConfig{}, false, true);
    CHECK(r.refined.vertices == mesh.vertices);
    CHECK(r.displacement.isZero());
    CHECK(r.displaced_vertices == 0);

    RefineOutcome on = refine_mesh(mesh, density, hf, PerturbConfig{}, SmoothConfig{}, true, true);
    CHECK(on.displaced_vertices > 0);
    CHECK(on.smoothed_energy < on.displacement_energy);
}

TEST_CASE("rigid model evaluates to its mesh")
{
    TriMesh mesh = make_icosphere(1, 0.1);
    BlendshapeModel m = rigid_model(mesh);
    HeadParams p = HeadParams::zeros(m.num_shape(), m.num_expr());
    CHECK(evaluate_model(m, p).vertices == mesh.vertices);
}

TEST_CASE("tiny pipeline run writes a deterministic report")
{
    SceneConfig s = tiny_scene();
    const auto dir_a = testutil::temp_dir("pipeline_a");
    const auto dir_b = testutil::temp_dir("pipeline_b");
    const json a = run_pipeline(s, dir_a);
    PipelineOptions serial;
    serial.exec = Exec::Serial;
    const json b = run_pipeline(s, dir_b, serial);
    CHECK(a == b);
    for (const char* f : {"report.json", "resolved-config.json", "template.obj", "field_phase1.bin",
                          "refined_full.obj", "cross_section.csv"})
        CHECK(std::filesystem::exists(dir_a / f));
    REQUIRE(a["variants"].size() == 3);
    CHECK(a["variants"][1]["label"] == "w/o Smo.");
    CHECK(a["heldout_frames"] == 2);
    CHECK(a["eval_set"] == "heldout");
    CHECK(a["phase1"]["per_frame"].size() == 2);
    CHECK(a["variants"][2]["laplacian_energy"] == 0.0);
    CHECK(a["variants"][2]["mesh_l2"] == a["mesh_l2_template"]);

    std::ifstream in_a(dir_a / "report.json"), in_b(dir_b / "report.json");
    std::string ta((std::istreambuf_iterator<char>(in_a)), {}), tb((std::istreambuf_iterator<char>(in_b)), {});
    CHECK(ta == tb);
}

TEST_CASE("pipeline with zero training steps still completes")
{
    SceneConfig s = tiny_scene();
    s.train.steps = 0;
    s.phase2.steps = 0;
    s.variants = {variant_from_label("full")};
    const json r = run_pipeline(s, testutil::temp_dir("pipeline_zero"));
    CHECK(r["phase1"]["loss_initial"].is_null());
    CHECK(r["variants"].size() == 1);
    CHECK(r["variants"][0]["phase2"]["loss_final"].is_null());
}

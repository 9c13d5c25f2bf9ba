#include "doctest.h"
#include "helpers.hpp"

#include "georefine/image.hpp"
#include "georefine/mesh.hpp"

#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace georefine;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run
{
    int code = -1;
    std::string out;
};

Run cli(const std::string& args, const fs::path& dir)
{
    const fs::path stdout_file = dir / "stdout.txt";
    const std::string cmd =
        std::string("\"") + GEOREFINE_CLI + "\" " + args + " > \"" + stdout_file.string() + "\" 2> \"" +
        (dir / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(stdout_file);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

} // namespace

TEST_CASE("cli: metrics of an image against itself")
{
    const fs::path dir = testutil::temp_dir("cli_metrics");
    Image img(16, 12);
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        img.rgb[i] = static_cast<double>(i % 7) / 6.0;
    write_png(dir / "a.png", img);
    Run r = cli("--quiet --out-dir \"" + (dir / "out").string() + "\" metrics \"" + (dir / "a.png").string() +
                    "\" \"" + (dir / "a.png").string() + "\"",
                dir);
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["l1"] == 0.0);
    CHECK(j["psnr"] == "inf");
    CHECK(j["ssim"] == 1.0);
    CHECK(fs::exists(dir / "out" / "resolved-config.json"));
}

TEST_CASE("cli: refine without perturbation or smoothing is the identity")
{
    const fs::path dir = testutil::temp_dir("cli_refine");
    TriMesh mesh = make_icosphere(2, 0.08);
    save_obj(dir / "in.obj", mesh);
    Run r = cli("--quiet --out-dir \"" + dir.string() + "\" refine \"" + (dir / "in.obj").string() +
                    "\" --no-perturb --no-smooth -o out.obj",
                dir);
    REQUIRE(r.code == 0);
    TriMesh back = load_mesh(dir / "out.obj");
    CHECK(back.faces == mesh.faces);
    CHECK(back.vertices == mesh.vertices);
}

TEST_CASE("cli: exit codes")
{
    const fs::path dir = testutil::temp_dir("cli_codes");
    CHECK(cli("", dir).code == 1);
    CHECK(cli("frobnicate", dir).code == 1);
    CHECK(cli("metrics only_one.png", dir).code == 1);
    CHECK(cli("--help", dir).code == 0);
    std::ofstream(dir / "junk.png") << "not a png";
    Run r = cli("--quiet --out-dir \"" + dir.string() + "\" metrics \"" + (dir / "junk.png").string() + "\" \"" +
                    (dir / "junk.png").string() + "\"",
                dir);
    CHECK(r.code == 2);
    std::ofstream(dir / "bad.json") << R"({"name": "x", "bogus": 1})";
    CHECK(cli("--quiet --out-dir \"" + dir.string() + "\" pipeline \"" + (dir / "bad.json").string() + "\"", dir)
              .code == 2);
}

TEST_CASE("cli: tiny pipeline prints both phases")
{
    const fs::path dir = testutil::temp_dir("cli_pipeline");
    const std::string scene = std::string(GEOREFINE_SCENES) + "/tiny_sphere.json";
    Run r = cli("--quiet --threads 2 --out-dir \"" + dir.string() + "\" pipeline \"" + scene +
                    "\" --steps 5 --phase2-steps 2 --no-smooth",
                dir);
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j.contains("phase1"));
    CHECK(j.contains("phase2"));
    const json report = json::parse(std::ifstream(dir / "report.json"));
    REQUIRE(report["variants"].size() == 1);
    CHECK(report["variants"][0]["label"] == "w/o Smo.");
    const json resolved = json::parse(std::ifstream(dir / "resolved-config.json"));
    CHECK(resolved["command"] == "pipeline");
    CHECK(resolved["scene"]["train"]["steps"] == 5);
}

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hpsl/cli.hpp"

using namespace hpsl;

namespace {

namespace fs = std::filesystem;

int run_cli(const std::vector<std::string>& args, std::string* stdout_text = nullptr,
            std::string* stderr_text = nullptr) {
    std::ostringstream out, err;
    int code = hpsl::cli::run(args, out, err);
    if (stdout_text) *stdout_text = out.str();
    if (stderr_text) *stderr_text = err.str();
    return code;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("parse-arch canonicalizes the appendix ssg string", "[cli]") {
    TempDir dir("hpsl_cli_parse");
    write_file_atomic(dir.path / "ssg.arch",
                      "# classification\nSA(512, 0.2, [64,64,128]) ->\n"
                      "SA(128,0.4,[128,128,256]) -> SA([256,512,1024]) ->\n"
                      "FC(512,0.5) -> FC(256,0.5) -> FC(40)\n");
    std::string out;
    int code = run_cli({"parse-arch", "--file", (dir.path / "ssg.arch").string()}, &out);
    CHECK(code == 0);
    CHECK(out ==
          "SA(512,0.2,[64,64,128]) -> SA(128,0.4,[128,128,256]) -> "
          "SA([256,512,1024]) -> FC(512,0.5) -> FC(256,0.5) -> FC(40,0)\n");
}

TEST_CASE("usage errors exit with code 2", "[cli]") {
    std::string err;
    CHECK(run_cli({}, nullptr, &err) == 2);
    CHECK(run_cli({"train"}, nullptr, &err) == 2);  // missing required flags
    CHECK(err.find("usage error") != std::string::npos);
    CHECK(run_cli({"no-such-command"}, nullptr, &err) == 2);
}

TEST_CASE("domain errors exit with code 1", "[cli]") {
    std::string err;
    CHECK(run_cli({"parse-arch", "--file", "/nonexistent.arch"}, nullptr, &err) == 1);
    CHECK(err.find("error:") != std::string::npos);

    TempDir dir("hpsl_cli_badarch");
    write_file_atomic(dir.path / "bad.arch", "SA(512,0.2)");
    CHECK(run_cli({"parse-arch", "--file", (dir.path / "bad.arch").string()}, nullptr,
                  &err) == 1);
    CHECK(err.find("byte") != std::string::npos);
}

TEST_CASE("argv fuzz never crashes the cli", "[cli]") {
    RngStream rng(99);
    const std::vector<std::string> words{
        "train",   "eval",     "--data", "--arch",   "--seed", "-x",
        "--out",   "gen-data", "--kind", "bananas",  "7",      "-1",
        "--budget", "sweep",   "",       "--threads"};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> args;
        const std::size_t len = rng.below(5);
        for (std::size_t i = 0; i < len; ++i)
            args.push_back(words[rng.below(words.size())]);
        std::string out, err;
        int code = run_cli(args, &out, &err);
        CHECK((code == 0 || code == 1 || code == 2));
    }
}

TEST_CASE("gen-data, train, eval and grad-check run end to end", "[cli]") {
    TempDir dir("hpsl_cli_e2e");
    const std::string corpus = (dir.path / "corpus").string();
    std::string out;
    int code = run_cli({"gen-data", "--kind", "2d-shapes", "--out", corpus, "--seed",
                        "5", "--n-per-class", "6", "--test-per-class", "3", "--points",
                        "48"},
                       &out);
    REQUIRE(code == 0);
    REQUIRE(fs::exists(dir.path / "corpus/manifest.json"));

    write_file_atomic(dir.path / "tiny.arch",
                      "SA(12,0.4,[6,6]) -> SA([8,8]) -> FC(6,0.5) -> FC(3)\n");
    write_file_atomic(dir.path / "train.json",
                      R"({"epochs":2,"batch_size":4,"eval_every":2,"ball_cap":8,"seed":1})");

    const std::string ckpt = (dir.path / "model.ckpt").string();
    code = run_cli({"train", "--data", corpus + "/manifest.json", "--arch",
                    (dir.path / "tiny.arch").string(), "--config",
                    (dir.path / "train.json").string(), "--out", ckpt, "--threads",
                    "2"},
                   &out);
    REQUIRE(code == 0);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(ckpt + ".metrics.csv"));

    code = run_cli({"eval", "--ckpt", ckpt, "--data", corpus + "/manifest.json"}, &out);
    REQUIRE(code == 0);
    CHECK(out.find("accuracy,") == 0);

    code = run_cli({"eval", "--ckpt", ckpt, "--data", corpus + "/manifest.json",
                    "--budget", "24", "--fps-starts", "3", "--seed", "9"},
                   &out);
    REQUIRE(code == 0);
    CHECK(out.find("accuracy_std,") != std::string::npos);

    // grad-check on a tiny blueprint prints the max relative error
    write_file_atomic(dir.path / "gc.arch",
                      "SA(8,0.5,[4,6]) -> SA([6,8]) -> FC(6,0) -> FC(3)\n");
    code = run_cli({"grad-check", "--blueprint", (dir.path / "gc.arch").string(),
                    "--seed", "7", "--points", "24"},
                   &out);
    REQUIRE(code == 0);
    CHECK(out.find("max_rel_err,") == 0);
    const double err_value = std::stod(out.substr(out.find(',') + 1));
    CHECK(err_value < 1e-5);
}

TEST_CASE("bench, scan and cubes commands produce their artifacts", "[cli]") {
    TempDir dir("hpsl_cli_tools");
    std::string out;
    int code = run_cli({"bench-neighbors", "--n", "300", "--kind", "ball", "--param",
                        "0.2", "--reps", "2", "--out",
                        (dir.path / "bench.csv").string()},
                       &out);
    REQUIRE(code == 0);
    std::ifstream bench(dir.path / "bench.csv");
    std::string header;
    std::getline(bench, header);
    CHECK(header == "method,kind,param,N,density,median_us,p95_us,result_hash");

    // scene -> scans -> cubes
    PointCloud scene = make_room_scene(3, 30000);
    write_cloud(scene, dir.path / "scene.pcl");
    code = run_cli({"scan", "--scene", (dir.path / "scene.pcl").string(), "--out",
                    (dir.path / "scans").string()},
                   &out);
    REQUIRE(code == 0);
    CHECK(fs::exists(dir.path / "scans/scans.json"));

    code = run_cli({"cubes", "--scene", (dir.path / "scene.pcl").string(), "--out",
                    (dir.path / "cubes").string(), "--target-n", "1024"},
                   &out);
    REQUIRE(code == 0);
    CHECK(fs::exists(dir.path / "cubes/cubes.json"));
}

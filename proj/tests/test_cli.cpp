#include "invdiff/config.hpp"
#include "invdiff/pipeline.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace invdiff;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.dataset.n = 200;
    cfg.dataset.n_test = 120;
    cfg.schedule.T = 20;
    cfg.pretrain.steps = 60;
    cfg.grouper.steps = 40;
    cfg.grouper.M = 2;
    cfg.invtrain.steps = 60;
    cfg.eval.samples_per_prompt = 32;
    cfg.eval.seeds = 2;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

} // namespace

TEST_CASE("default config validates cleanly") {
    RunConfig cfg;
    CHECK(cfg.validate().empty());
}

TEST_CASE("out-of-range delta is reported with field and range") {
    RunConfig cfg;
    cfg.invtrain.delta = 1.5;
    auto v = cfg.validate();
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("invtrain.delta") != std::string::npos);
    CHECK(v[0].find("[0,1]") != std::string::npos);
}

TEST_CASE("multiple violations are all reported") {
    RunConfig cfg;
    cfg.invtrain.delta = 1.5;
    cfg.grouper.E = 1;
    cfg.schedule.T = 5;
    CHECK(cfg.validate().size() == 3);
}

TEST_CASE("unparseable config raises a parse error") {
    TempDir tmp("invdiff_cfg_test");
    std::string path = (tmp.path / "bad.json").string();
    std::ofstream(path) << "{not json";
    CHECK_THROWS_AS(RunConfig::from_file(path), ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
    RunConfig a, b;
    CHECK(a.hash() == b.hash());
    b.invtrain.delta = 0.31;
    CHECK(a.hash() != b.hash());
}

TEST_CASE("field access by dotted path") {
    RunConfig cfg;
    CHECK(cfg.get_field("invtrain.delta") == doctest::Approx(0.3));
    cfg.set_field("invtrain.delta", 0.7);
    CHECK(cfg.invtrain.delta == doctest::Approx(0.7));
    CHECK_THROWS_AS(cfg.get_field("no.such"), ConfigError);
}

TEST_CASE("stages demand upstream artifacts with a stage hint") {
    TempDir tmp("invdiff_missing_test");
    RunConfig cfg = tiny_config();
    CHECK_THROWS_WITH_AS(stage_pretrain(cfg, tmp.str()),
                         doctest::Contains("synth"), MissingArtifactError);
    CHECK_THROWS_WITH_AS(stage_infer_groups(cfg, tmp.str()),
                         doctest::Contains("synth"), MissingArtifactError);
    stage_synth(cfg, tmp.str());
    CHECK_THROWS_WITH_AS(stage_infer_groups(cfg, tmp.str()),
                         doctest::Contains("pretrain"),
                         MissingArtifactError);
    CHECK_THROWS_WITH_AS(stage_train_guidance(cfg, tmp.str()),
                         doctest::Contains("pretrain"),
                         MissingArtifactError);
    CHECK_THROWS_WITH_AS(stage_evaluate(cfg, tmp.str(), "invdiff"),
                         doctest::Contains("pretrain"),
                         MissingArtifactError);
}

TEST_CASE("full tiny pipeline runs and reruns byte-identically") {
    TempDir tmp("invdiff_pipeline_test");
    RunConfig cfg = tiny_config();
    run_all(cfg, tmp.str());

    for (const char* name :
         {"dataset.json", "test_dataset.json", "denoiser.json",
          "groups.json", "guidance.json", "report_biased.json",
          "report_invdiff.json", "summary.csv"})
        CHECK(fs::exists(tmp.path / name));

    // capture, rerun, compare numeric artifacts byte for byte
    std::map<std::string, std::string> first;
    for (const char* name :
         {"dataset.json", "denoiser.json", "groups.json", "guidance.json",
          "report_biased.json", "report_invdiff.json", "summary.csv"})
        first[name] = read_file((tmp.path / name).string());
    run_all(cfg, tmp.str());
    for (const auto& [name, content] : first)
        CHECK(read_file((tmp.path / name).string()) == content);
}

TEST_CASE("evaluate rows differ only in model column and metrics") {
    TempDir tmp("invdiff_eval_test");
    RunConfig cfg = tiny_config();
    run_all(cfg, tmp.str());
    std::string csv = read_file((tmp.path / "summary.csv").string());
    // two data rows, one per model, sharing run_id and config columns
    auto lines = [&] {
        std::vector<std::string> out;
        std::istringstream ss(csv);
        std::string line;
        while (std::getline(ss, line))
            out.push_back(line);
        return out;
    }();
    REQUIRE(lines.size() == 3);
    CHECK(lines[1].find("biased") != std::string::npos);
    CHECK(lines[2].find("invdiff") != std::string::npos);
    auto run_id = [](const std::string& line) {
        return line.substr(0, line.find(','));
    };
    CHECK(run_id(lines[1]) == run_id(lines[2]));
}

TEST_CASE("sample artifacts carry version, config hash and seed") {
    TempDir tmp("invdiff_sample_test");
    RunConfig cfg = tiny_config();
    stage_synth(cfg, tmp.str());
    stage_pretrain(cfg, tmp.str());
    stage_sample(cfg, tmp.str(), "biased", 1, 99);
    std::string path =
        (tmp.path / "samples" / "biased_y1_seed99.json").string();
    REQUIRE(fs::exists(path));
    std::string text = read_file(path);
    CHECK(text.find("\"version\"") != std::string::npos);
    CHECK(text.find("\"config_hash\"") != std::string::npos);
    CHECK(text.find("\"seed\":99") != std::string::npos);
}

TEST_CASE("sweep produces one run directory per value plus a combined CSV") {
    TempDir tmp("invdiff_sweep_test");
    RunConfig cfg = tiny_config();
    cfg.pretrain.steps = 30;
    cfg.invtrain.steps = 30;
    sweep(cfg, "invtrain.delta", {0.1, 0.4}, tmp.str());
    CHECK(fs::exists(tmp.path / "invtrain.delta=0.1"));
    CHECK(fs::exists(tmp.path / "invtrain.delta=0.4"));
    std::string csv = read_file((tmp.path / "sweep_summary.csv").string());
    int rows = 0;
    for (char c : csv)
        rows += c == '\n' ? 1 : 0;
    CHECK(rows == 5); // header + 2 models x 2 runs
    CHECK_THROWS_AS(sweep(cfg, "paths.bogus", {1.0}, tmp.str()),
                    ConfigError);
}

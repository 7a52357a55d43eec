#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bbh/checkpoint.hpp"
#include "bbh/runner.hpp"

using namespace bbh;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// metrics.csv with the wall-time column blanked
std::string without_runtime(const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    std::getline(in, line);
    out += line + "\n";
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream cl(line);
        std::string cell;
        while (std::getline(cl, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 6);
        cells[4] = "-";
        for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
        out += "\n";
    }
    return out;
}

const char* kTinyRun =
    "train.method = map\n"
    "train.steps = 40\n"
    "train.batch = 32\n"
    "network.extents = 784,12,10\n"
    "data.kind = synth\n"
    "data.train_count = 256\n"
    "data.test_count = 128\n"
    "data.outlier_count = 64\n"
    "eval.samples = 4\n"
    "eval.eps = 0,0.2\n"
    "eval.attack_count = 64\n"
    "eval.attack_samples = 2\n"
    "eval.diag_samples = 16\n"
    "eval.diag_coords = 4\n"
    "seed = 3\n";

}  // namespace

TEST_CASE("run_experiment writes the full artifact set") {
    const std::string dir = fresh_dir("bbh_run_artifacts");
    ExperimentConfig cfg = parse_config(std::string(kTinyRun) + "out.dir = " + dir + "\n");
    std::ostringstream log;
    ExperimentOutcome outcome = run_experiment(cfg, log);

    for (const char* name : {"metrics.csv", "sweep.csv", "sweep.svg", "training_log.csv",
                             "histograms.csv", "correlations.csv", "checkpoint.bbh",
                             "manifest.txt"}) {
        INFO(name);
        CHECK(fs::exists(fs::path(dir) / name));
    }

    const std::string manifest = slurp((fs::path(dir) / "manifest.txt").string());
    for (const char* name : {"metrics.csv", "sweep.csv", "checkpoint.bbh"}) {
        CHECK(manifest.find(name) != std::string::npos);
    }

    const std::string metrics = slurp((fs::path(dir) / "metrics.csv").string());
    CHECK(metrics.rfind("method,error_pct,in_auc,outlier_auc,runtime_s,seed\n", 0) == 0);
    CHECK(metrics.find("map,") != std::string::npos);
    CHECK(outcome.metrics.error_pct >= 0.0);
    CHECK(outcome.metrics.error_pct <= 100.0);
    CHECK(outcome.sweep.epsilons.size() == 2);

    const std::string svg = slurp((fs::path(dir) / "sweep.svg").string());
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("stroke-dasharray") != std::string::npos);  // entropy series dashed

    fs::remove_all(dir);
}

TEST_CASE("rerunning the same config overwrites with identical content") {
    const std::string dir = fresh_dir("bbh_run_det");
    ExperimentConfig cfg = parse_config(std::string(kTinyRun) + "out.dir = " + dir + "\n");
    std::ostringstream log;

    run_experiment(cfg, log);
    const std::string metrics = slurp((fs::path(dir) / "metrics.csv").string());
    const std::string sweep = slurp((fs::path(dir) / "sweep.csv").string());
    const std::string train_log = slurp((fs::path(dir) / "training_log.csv").string());
    const std::string ckpt = slurp((fs::path(dir) / "checkpoint.bbh").string());

    run_experiment(cfg, log);
    CHECK(without_runtime(slurp((fs::path(dir) / "metrics.csv").string())) ==
          without_runtime(metrics));
    CHECK(slurp((fs::path(dir) / "sweep.csv").string()) == sweep);
    CHECK(slurp((fs::path(dir) / "training_log.csv").string()) == train_log);
    CHECK(slurp((fs::path(dir) / "checkpoint.bbh").string()) == ckpt);
    fs::remove_all(dir);
}

TEST_CASE("toy run emits the predictive table") {
    const std::string dir = fresh_dir("bbh_run_toy");
    ExperimentConfig cfg = parse_config(msg(
        "train.method = map\ntrain.steps = 60\ntrain.batch = 20\nnetwork.extents = 1,16,1\n"
        "data.kind = toy\ndata.toy_points = 20\neval.samples = 8\nout.dir = ", dir, "\n"));
    std::ostringstream log;
    run_toy(cfg, log);

    const std::string csv = slurp((fs::path(dir) / "toy_predictive.csv").string());
    CHECK(csv.rfind("x,mean,std\n", 0) == 0);
    std::size_t rows = 0;
    for (char c : csv) rows += (c == '\n');
    CHECK(rows == 122);  // header + 121 grid points
    CHECK(fs::exists(fs::path(dir) / "toy.svg"));
    CHECK(fs::exists(fs::path(dir) / "checkpoint.bbh"));
    fs::remove_all(dir);
}

TEST_CASE("eval, attack and diagnose work from a checkpoint") {
    const std::string dir = fresh_dir("bbh_run_reuse");
    ExperimentConfig cfg = parse_config(std::string(kTinyRun) + "out.dir = " + dir + "\n");
    std::ostringstream log;
    ExperimentOutcome outcome = run_experiment(cfg, log);

    MetricsRow row = run_eval(outcome.checkpoint_path, "", log);
    CHECK(row.method == "map");
    CHECK(row.error_pct == doctest::Approx(outcome.metrics.error_pct));
    CHECK(row.in_auc == doctest::Approx(outcome.metrics.in_auc));

    AdversarialSweep sweep = run_attack(outcome.checkpoint_path, {0.0, 0.1}, log);
    CHECK(sweep.epsilons.size() == 2);
    CHECK(sweep.accuracy[0] == doctest::Approx(outcome.sweep.accuracy[0]));

    WeightDiagnostics diag = run_diagnose(outcome.checkpoint_path, "dense0.kernel[0:3]", 16, log);
    CHECK(diag.labels.size() == 3);
    CHECK(fs::exists(fs::path(dir) / "histograms.csv"));
    fs::remove_all(dir);
}

TEST_CASE("missing dataset path fails naming the path") {
    const std::string dir = fresh_dir("bbh_run_missing");
    ExperimentConfig cfg = parse_config(msg(
        "train.method = map\ntrain.steps = 5\ndata.kind = idx\n"
        "data.train_images = ", dir, "/none_images.idx\n",
        "data.train_labels = ", dir, "/none_labels.idx\n",
        "data.test_images = ", dir, "/none_t.idx\ndata.test_labels = ", dir, "/none_tl.idx\n",
        "out.dir = ", dir, "\n"));
    std::ostringstream log;
    try {
        run_experiment(cfg, log);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("none_images.idx") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("weight selector parsing") {
    auto sel = parse_weight_selector("dense0.kernel[0:25],dense0.bias,conv0.kernel[7]");
    REQUIRE(sel.size() == 3);
    CHECK(sel[0].name == "dense0.kernel");
    CHECK(sel[0].begin == 0);
    CHECK(sel[0].end == 25);
    CHECK(sel[1].name == "dense0.bias");
    CHECK(sel[1].end == 0);  // whole tensor
    CHECK(sel[2].begin == 7);
    CHECK(sel[2].end == 8);
    CHECK_THROWS_AS(parse_weight_selector(""), ConfigError);
    CHECK_THROWS_AS(parse_weight_selector("w[1:"), ConfigError);
    CHECK_THROWS_AS(parse_weight_selector("w[a]"), ConfigError);
}

TEST_CASE("grid runs every config and writes the summary") {
    const std::string dir = fresh_dir("bbh_run_grid");
    for (const char* method : {"map", "bbb"}) {
        std::ofstream out(fs::path(dir) / msg(method, ".cfg"));
        out << "train.method = " << method << "\ntrain.steps = 20\ntrain.batch = 32\n"
            << "network.extents = 784,8,10\ndata.kind = synth\ndata.train_count = 128\n"
            << "data.test_count = 64\ndata.outlier_count = 32\neval.samples = 2\n"
            << "eval.eps = 0,0.2\neval.attack_count = 32\neval.attack_samples = 2\n"
            << "eval.diag_samples = 8\neval.diag_coords = 2\nseed = 1\n"
            << "out.dir = " << dir << "/" << method << "\n";
    }
    std::ostringstream log;
    run_grid(dir, log);

    const std::string summary = slurp((fs::path(dir) / "grid_summary.csv").string());
    CHECK(summary.rfind("config,method,", 0) == 0);
    CHECK(summary.find("map.cfg,map,") != std::string::npos);
    CHECK(summary.find("bbb.cfg,bbb,") != std::string::npos);
    fs::remove_all(dir);
}

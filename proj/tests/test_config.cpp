#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>

#include "bbh/config.hpp"

using namespace bbh;

TEST_CASE("single method line resolves a full default config") {
    ExperimentConfig cfg = parse_config("train.method = bbh\n");
    CHECK(cfg.train.method == Method::bbh);
    CHECK(cfg.train.lr == 1e-4);                 // bbh default
    CHECK(cfg.train.anneal_fraction == 0.5);     // bbh anneals
    CHECK(cfg.train.kl_samples == 5);
    CHECK(cfg.train.prior_samples == 5);
    CHECK(cfg.eval_samples == 100);
    CHECK(cfg.eps_grid.size() == 9);
    CHECK(cfg.eps_grid.front() == 0.0);
    CHECK(cfg.eps_grid.back() == doctest::Approx(0.4));

    ExperimentConfig map_cfg = parse_config("train.method = map\n");
    CHECK(map_cfg.train.lr == 1e-3);
    CHECK(map_cfg.train.anneal_fraction == 0.0);
}

TEST_CASE("invalid values raise named-field errors") {
    try {
        parse_config("train.lr = -1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.lr") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("train.steps = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.anneal_fraction = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("eval.eps = 0.3,0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("network.extents = 784\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.method = nonsense\n"), ConfigError);
}

TEST_CASE("duplicate keys name both lines") {
    try {
        parse_config("train.lr = 0.1\n# comment\ntrain.lr = 0.2\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("train.lr") != std::string::npos);
        CHECK(what.find("1") != std::string::npos);
        CHECK(what.find("3") != std::string::npos);
    }
}

TEST_CASE("unknown keys and syntax errors carry line numbers") {
    try {
        parse_config("train.method = map\nfoo.bar = 1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("foo.bar") != std::string::npos);
        CHECK(what.find("line 2") != std::string::npos);
    }
    try {
        parse_config("not a key value pair\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
}

TEST_CASE("method-specific sections are only accepted where they apply") {
    CHECK_THROWS_AS(parse_config("train.method = map\nhypernet.noise_dim = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.method = map\ntrain.dropout_rate = 0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.method = bbb\ntrain.ensemble_k = 3\n"), ConfigError);

    ExperimentConfig ok = parse_config(
        "train.method = bbh\nhypernet.arch = sliced_layer_wise\nhypernet.noise_dim = 8\n"
        "hypernet.noise_mode = shared\nhypernet.hidden = 16,32\n");
    CHECK(ok.train.hypernet.arch == HypernetConfig::Arch::sliced_layer_wise);
    CHECK(ok.train.hypernet.noise_dim == 8);
    CHECK(ok.train.hypernet.noise_mode == HypernetConfig::NoiseMode::shared);
    CHECK(ok.train.hypernet.hidden == std::vector<std::size_t>{16, 32});
}

TEST_CASE("idx data demands its paths") {
    try {
        parse_config("data.kind = idx\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("data.train_images") != std::string::npos);
    }
}

TEST_CASE("comments, blank lines and seed propagation") {
    ExperimentConfig cfg = parse_config(
        "# experiment\n\ntrain.method = bbb   # analytic KL\nseed = 42\n");
    CHECK(cfg.train.method == Method::bbb);
    CHECK(cfg.seed == 42);
    CHECK(cfg.train.seed == 42);
}

TEST_CASE("serialize/parse roundtrip preserves the config") {
    for (const char* text :
         {"train.method = bbh\nhypernet.noise_dim = 8\nseed = 7\nnetwork.extents = 10,6,3\n",
          "train.method = dropout\ntrain.dropout_rate = 0.25\ndata.kind = toy\n"
          "network.extents = 1,50,1\ndata.toy_points = 30\n",
          "train.method = ensemble\ntrain.ensemble_k = 4\neval.eps = 0,0.2,0.4\n"}) {
        ExperimentConfig a = parse_config(text);
        ExperimentConfig b = parse_config(serialize_config(a));
        CHECK(serialize_config(a) == serialize_config(b));
    }
}

TEST_CASE("build_network follows the config") {
    ExperimentConfig mlp_cfg = parse_config("network.kind = mlp\nnetwork.extents = 4,8,2\n");
    CHECK(build_network(mlp_cfg).param_count() == 4 * 8 + 8 + 8 * 2 + 2);
    ExperimentConfig lenet_cfg = parse_config("network.kind = lenet\nnetwork.classes = 10\n");
    CHECK(build_network(lenet_cfg).param_count() == 431080);
}

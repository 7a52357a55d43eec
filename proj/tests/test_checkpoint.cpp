#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bbh/checkpoint.hpp"
#include "bbh/training.hpp"

using namespace bbh;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint roundtrip is bitwise lossless for every family") {
    for (const char* method : {"bbh", "bbb", "dropout", "map"}) {
        ExperimentConfig cfg = parse_config(
            msg("train.method = ", method, "\nnetwork.extents = 3,4,2\nseed = 11\n",
                std::string(method) == "bbh" ? "hypernet.hidden = 6,8\n" : ""));
        NetworkSpec spec = build_network(cfg);
        Rng rng = make_rng(cfg.seed, 0x7421);
        std::unique_ptr<Posterior> post;
        if (cfg.train.method == Method::bbh) {
            post = std::make_unique<HypernetPosterior>(cfg.train.hypernet, spec, rng);
        } else if (cfg.train.method == Method::bbb) {
            post = std::make_unique<FactorizedGaussianPosterior>(spec, rng);
        } else if (cfg.train.method == Method::dropout) {
            post = std::make_unique<DropoutPosterior>(spec, 0.5, rng);
        } else {
            post = std::make_unique<PointPosterior>(spec, rng);
        }

        const std::string path = temp_path(msg("bbh_ckpt_", method, ".bbh"));
        save_posterior(path, cfg, *post);
        Checkpoint ck = load_checkpoint(path);
        std::unique_ptr<Posterior> back = restore_posterior(ck);

        REQUIRE(back->parameters().size() == post->parameters().size());
        for (std::size_t i = 0; i < back->parameters().size(); ++i) {
            INFO(method, " ", post->parameters()[i].name);
            CHECK(back->parameters()[i].name == post->parameters()[i].name);
            CHECK(back->parameters()[i].value.data() == post->parameters()[i].value.data());
        }
        CHECK(serialize_config(ck.config) == serialize_config(cfg));

        // a second save of the restored posterior reproduces the file exactly
        const std::string path2 = temp_path("bbh_ckpt_again.bbh");
        save_posterior(path2, ck.config, *back);
        CHECK(slurp(path) == slurp(path2));
        std::remove(path.c_str());
        std::remove(path2.c_str());
    }
}

TEST_CASE("ensemble checkpoints restore their members") {
    ExperimentConfig cfg = parse_config(
        "train.method = ensemble\ntrain.ensemble_k = 3\nnetwork.extents = 2,3,2\n");
    NetworkSpec spec = build_network(cfg);
    std::vector<WeightSet> members;
    for (int i = 0; i < 3; ++i) {
        Rng rng(40 + i);
        members.push_back(init_point_weights(spec, rng));
    }
    EnsemblePosterior ens(spec, members);

    const std::string path = temp_path("bbh_ckpt_ens.bbh");
    save_posterior(path, cfg, ens);
    std::unique_ptr<Posterior> back = restore_posterior(load_checkpoint(path));
    auto& ens_back = static_cast<EnsemblePosterior&>(*back);
    CHECK(ens_back.members() == 3);
    SampleCtx plain;
    auto sets = ens_back.sample(plain, 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(sets[i].at("dense0.kernel").data() == members[i].at("dense0.kernel").data());
    }
    std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected with format errors") {
    ExperimentConfig cfg = parse_config("train.method = map\nnetwork.extents = 2,2\n");
    NetworkSpec spec = build_network(cfg);
    Rng rng(1);
    PointPosterior post(spec, rng);
    const std::string path = temp_path("bbh_ckpt_bad.bbh");
    save_posterior(path, cfg, post);
    const std::vector<char> good = slurp(path);

    // flipped magic byte
    std::vector<char> bad = good;
    bad[0] = 'X';
    spit(path, bad);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    // unsupported version
    bad = good;
    bad[4] = 9;
    spit(path, bad);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    // truncated payload names the tensor that falls short (last in manifest)
    bad = good;
    bad.resize(bad.size() - 8);
    spit(path, bad);
    try {
        load_checkpoint(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("w.dense0.bias") != std::string::npos);
    }

    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint(temp_path("bbh_no_such.bbh")), IoError);
}

TEST_CASE("trained posterior survives a save/load/eval cycle") {
    ExperimentConfig cfg = parse_config(
        "train.method = bbb\nnetwork.extents = 1,4,1\ndata.kind = toy\ntrain.steps = 30\n"
        "train.batch = 8\nseed = 5\n");
    NetworkSpec spec = build_network(cfg);
    Dataset data = toy_regression(cfg.toy_points, cfg.toy_x_lo, cfg.toy_x_hi,
                                  cfg.toy_noise_std, cfg.seed);
    TrainResult r = train(cfg.train, spec, data);

    const std::string path = temp_path("bbh_ckpt_trained.bbh");
    save_posterior(path, cfg, *r.posterior);
    std::unique_ptr<Posterior> back = restore_posterior(load_checkpoint(path));

    Rng ra(3), rb(3);
    SampleCtx ca(ra), cb(rb);
    auto sa = r.posterior->sample(ca, 2);
    auto sb = back->sample(cb, 2);
    for (std::size_t s = 0; s < 2; ++s) {
        for (const auto& [name, t] : sa[s]) {
            CHECK(sb[s].at(name).data() == t.data());
        }
    }
    std::remove(path.c_str());
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bbh/data.hpp"
#include "bbh/evaluation.hpp"

using namespace bbh;

namespace {

WeightSet weights_from(const NetworkSpec& spec, const std::map<std::string, std::vector<double>>& v) {
    WeightSet ws;
    for (const WeightInfo& info : spec.weight_infos()) {
        auto it = v.find(info.name);
        ws[info.name] = it == v.end() ? Tensor::zeros(info.shape)
                                      : Tensor(info.shape, it->second);
    }
    return ws;
}

}  // namespace

TEST_CASE("predictive entropy fixtures") {
    std::vector<double> uniform10(10, 0.1);
    CHECK(predictive_entropy(uniform10, true) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> onehot = {0.0, 1.0, 0.0};
    CHECK(predictive_entropy(onehot, true) == 0.0);
    CHECK(predictive_entropy(onehot, false) == 0.0);

    std::vector<double> half = {0.5, 0.5};
    CHECK(predictive_entropy(half, false) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    std::vector<double> bad = {-0.1, 1.1};
    CHECK_THROWS_AS(predictive_entropy(bad, true), ContractError);
}

TEST_CASE("entropy CDF AUC fixtures and monotonicity") {
    std::vector<double> zeros(5, 0.0), ones(5, 1.0), pair = {0.0, 1.0};
    CHECK(entropy_cdf_auc(zeros) == 1.0);
    CHECK(entropy_cdf_auc(ones) == 0.0);
    CHECK(entropy_cdf_auc(pair) == doctest::Approx(0.5));
    CHECK_THROWS_AS(entropy_cdf_auc(std::vector<double>{}), ContractError);
    CHECK_THROWS_AS(entropy_cdf_auc(std::vector<double>{1.5}), ContractError);

    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(20), b(20);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = uniform(rng, 0.0, 1.0);
            b[i] = std::min(1.0, a[i] + uniform(rng, 0.0, 0.3));  // pointwise larger
        }
        CHECK(entropy_cdf_auc(b) <= entropy_cdf_auc(a) + 1e-15);
    }
}

TEST_CASE("point posterior prediction equals a single forward pass") {
    NetworkSpec spec = build_mlp({2, 3});
    Rng rng(3);
    PointPosterior post(spec, rng);
    Tensor x({2, 2}, {0.2, 0.8, 0.6, 0.1});

    Rng r1(1), r2(2);
    PredictiveResult p1 = predictive_distribution(post, x, 1, r1);
    PredictiveResult p100 = predictive_distribution(post, x, 100, r2);
    CHECK(p1.probs.data() == p100.probs.data());
    CHECK(p100.samples == 1);

    SampleCtx plain;
    std::vector<double> direct = softmax_rows(apply_network(spec, post.point_weights(plain), x));
    CHECK(p1.probs.data() == direct);
}

TEST_CASE("ensemble prediction averages member softmax outputs") {
    NetworkSpec spec = build_mlp({1, 2});
    // member A strongly favors class 0, member B class 1
    WeightSet a = weights_from(spec, {{"dense0.bias", {1000.0, 0.0}}});
    WeightSet b = weights_from(spec, {{"dense0.bias", {0.0, 1000.0}}});
    EnsemblePosterior ens(spec, {a, b});

    Tensor x({1, 1}, {0.3});
    Rng rng(1);
    PredictiveResult pred = predictive_distribution(ens, x, 100, rng);
    CHECK(pred.samples == 2);
    CHECK(pred.probs.data()[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(pred.probs.data()[1] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(pred.entropy[0] == doctest::Approx(1.0).epsilon(1e-9));  // C = 2
}

TEST_CASE("predictive rows sum to one for random posteriors") {
    NetworkSpec spec = build_mlp({3, 5, 4});
    Rng rng(9);
    FactorizedGaussianPosterior post(spec, rng, 0.3);
    Tensor x = Tensor::zeros({6, 3});
    for (double& v : x.data()) v = uniform(rng, -1.0, 1.0);
    Rng erng(4);
    PredictiveResult pred = predictive_distribution(post, x, 16, erng);
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) s += pred.probs.data()[r * 4 + c];
        CHECK(std::abs(s - 1.0) < 1e-9);
        CHECK(pred.entropy[r] >= 0.0);
        CHECK(pred.entropy[r] <= 1.0);
    }
}

TEST_CASE("predictive estimator is unbiased across sample splits") {
    NetworkSpec spec = build_mlp({1, 2});
    Rng rng(11);
    FactorizedGaussianPosterior post(spec, rng, 0.5);
    Tensor x({1, 1}, {0.7});

    const int trials = 300;
    Rng ra(21), rb(22);
    double mean_a = 0.0, mean_b = 0.0, var_a = 0.0, var_b = 0.0;
    std::vector<double> va, vb;
    for (int t = 0; t < trials; ++t) {
        va.push_back(predictive_distribution(post, x, 4, ra).probs.data()[0]);
        const double h1 = predictive_distribution(post, x, 2, rb).probs.data()[0];
        const double h2 = predictive_distribution(post, x, 2, rb).probs.data()[0];
        vb.push_back(0.5 * (h1 + h2));
    }
    for (double v : va) mean_a += v;
    for (double v : vb) mean_b += v;
    mean_a /= trials;
    mean_b /= trials;
    for (double v : va) var_a += (v - mean_a) * (v - mean_a);
    for (double v : vb) var_b += (v - mean_b) * (v - mean_b);
    var_a /= trials - 1;
    var_b /= trials - 1;
    const double se = std::sqrt(var_a / trials + var_b / trials);
    CHECK(std::abs(mean_a - mean_b) <= 3.0 * se);
}

TEST_CASE("fgsm attack contracts and the linear monotone case") {
    NetworkSpec spec = build_mlp({1, 2});
    WeightSet ws = weights_from(spec, {{"dense0.kernel", {0.0, 3.0}}});  // logit1 = 3x
    EnsemblePosterior post(spec, {ws});

    Tensor x({3, 1}, {0.2, 0.5, 0.9});
    std::vector<int> labels = {0, 0, 0};  // class 0 favored at small x

    Rng rng(1);
    Tensor same = fgsm_attack(post, x, labels, 0.0, 4, rng);
    CHECK(same.data() == x.data());

    for (double eps : {0.05, 0.3}) {
        Rng r(2);
        Tensor adv = fgsm_attack(post, x, labels, eps, 4, r);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            CHECK(std::abs(adv.data()[i] - x.data()[i]) <= eps + 1e-12);
            CHECK(adv.data()[i] >= 0.0);
            CHECK(adv.data()[i] <= 1.0);
            // loss grows with x here, so the attack pushes x upward
            CHECK(adv.data()[i] == doctest::Approx(std::min(1.0, x.data()[i] + eps)));
        }
        SampleCtx plain;
        Tensor clean_logits = apply_network(spec, ws, x);
        Tensor adv_logits = apply_network(spec, ws, adv);
        CHECK(softmax_cross_entropy(adv_logits, labels).item() >=
              softmax_cross_entropy(clean_logits, labels).item());
    }

    CHECK_THROWS_AS(fgsm_attack(post, x, labels, -0.1, 4, rng), ContractError);
    Tensor outside({1, 1}, {1.4});
    CHECK_THROWS_AS(fgsm_attack(post, outside, {0}, 0.1, 4, rng), ContractError);
}

TEST_CASE("adversarial sweep on an untrained posterior sits at chance level") {
    Dataset data = synthetic_digits(1000, 77, "test");
    Tensor x = normalize(data.inputs);
    NetworkSpec spec = build_mlp({784, 16, 10});
    Rng rng(5);
    // wide untrained posterior: every evaluation resamples weights, so both
    // clean predictions and attack directions are label-independent noise
    FactorizedGaussianPosterior post(spec, rng, 1.0);

    Rng lrng(123);
    std::vector<int> labels(data.size());
    std::uniform_int_distribution<int> pick(0, 9);
    for (int& l : labels) l = pick(lrng);

    Rng srng(6);
    AdversarialSweep sweep = adversarial_sweep(post, x, labels, {0.0, 0.1, 0.2}, 2, srng);
    CHECK(sweep.accuracy.size() == 3);
    CHECK(sweep.mean_entropy.size() == 3);
    for (double acc : sweep.accuracy) {
        CHECK(acc > 0.05);
        CHECK(acc < 0.15);
    }

    // eps = 0 reproduces the clean accuracy (point posterior: no sampling noise)
    Rng prng(8);
    PointPosterior point(spec, prng);
    Rng r2(7), r3(9);
    AdversarialSweep zero = adversarial_sweep(point, x, labels, {0.0}, 2, r2);
    PredictiveResult clean = predictive_distribution(point, x, 2, r3);
    CHECK(zero.accuracy[0] == accuracy(clean.probs, labels));

    CHECK_THROWS_AS(adversarial_sweep(post, x, labels, {0.2, 0.1}, 2, srng), ContractError);
}

TEST_CASE("weight diagnostics: spikes, correlations, conventions") {
    NetworkSpec spec = build_mlp({2, 1});

    // point posterior: zero variance everywhere
    Rng rng(3);
    PointPosterior point(spec, rng);
    Rng drng(4);
    WeightDiagnostics d =
        weight_diagnostics(point, 50, {{"dense0.kernel", 0, 0}}, drng);
    CHECK(d.labels.size() == 2);
    for (const WeightHistogram& h : d.histograms) {
        CHECK(h.counts[0] == 50);  // single spike
        CHECK(h.lo == h.hi);
    }
    for (double c : d.correlation) CHECK(c == 0.0);

    // coordinate pair with w2 = 2 * w1 across members: correlation 1
    std::vector<WeightSet> members;
    for (double a : {1.0, 2.0, 3.0, 5.0}) {
        WeightSet ws = weights_from(spec, {{"dense0.kernel", {a, 2.0 * a}}});
        members.push_back(ws);
    }
    EnsemblePosterior ens(spec, members);
    Rng drng2(5);
    WeightDiagnostics d2 = weight_diagnostics(ens, 64, {{"dense0.kernel", 0, 2}}, drng2);
    CHECK(d2.correlation[0 * 2 + 1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(d2.correlation[0] == doctest::Approx(1.0).epsilon(1e-9));

    // factorized gaussian: independent coordinates stay near zero correlation
    NetworkSpec spec2 = build_mlp({4, 2});
    Rng rng3(9);
    FactorizedGaussianPosterior fg(spec2, rng3, 0.4);
    Rng drng3(11);
    WeightDiagnostics d3 = weight_diagnostics(fg, 10000, {{"dense0.kernel", 0, 4}}, drng3);
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = 0; b < 4; ++b) {
            if (a == b) continue;
            CHECK(std::abs(d3.correlation[a * 4 + b]) < 0.1);
        }
    }

    CHECK_THROWS_AS(weight_diagnostics(point, 1, {{"dense0.kernel", 0, 0}}, drng),
                    ContractError);
    CHECK_THROWS_AS(weight_diagnostics(point, 10, {{"nope", 0, 0}}, drng), ContractError);
    CHECK_THROWS_AS(weight_diagnostics(point, 10, {{"dense0.kernel", 5, 9}}, drng), IndexError);
}

TEST_CASE("regression predictive for a point posterior has zero spread") {
    NetworkSpec spec = build_mlp({1, 4, 1});
    Rng rng(13);
    PointPosterior post(spec, rng);
    Tensor xs({5, 1}, {-2, -1, 0, 1, 2});
    Rng prng(1);
    RegressionPredictive pred = predictive_regression(post, xs, 50, prng);
    SampleCtx plain;
    Tensor direct = apply_network(spec, post.point_weights(plain), xs);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(pred.mean[i] == doctest::Approx(direct.data()[i]));
        CHECK(pred.stdev[i] == 0.0);
    }
}

TEST_CASE("accuracy helper") {
    Tensor probs({3, 2}, {0.9, 0.1, 0.2, 0.8, 0.6, 0.4});
    CHECK(accuracy(probs, {0, 1, 0}) == 1.0);
    CHECK(accuracy(probs, {1, 1, 0}) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(accuracy(probs, {0}), DimensionError);
}

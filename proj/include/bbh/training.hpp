#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bbh/data.hpp"
#include "bbh/nets.hpp"
#include "bbh/posterior.hpp"

namespace bbh {

enum class Method { bbh, bbb, bbb_kernel, bbb_avb, dropout, map, ensemble };

std::string method_name(Method m);
Method method_from(const std::string& name);

struct TrainConfig {
    Method method = Method::map;
    double lr = 1e-3;
    std::size_t steps = 1000;
    std::size_t batch = 128;
    std::size_t kl_samples = 5;     // posterior draws per KL estimate
    std::size_t prior_samples = 5;  // prior draws per KL estimate
    double anneal_fraction = 0.0;   // fraction of steps over which the KL ramps to 1
    double kl_scale = 0.0;          // <= 0 resolves to 1/N
    std::uint64_t seed = 1;
    std::size_t ensemble_k = 5;
    double dropout_rate = 0.5;
    HypernetConfig hypernet;
    double gaussian_init_sigma = 0.05;

    // discriminator schedule for the adversarial KL path
    std::size_t avb_pretrain = 100;
    std::size_t avb_ratio = 5;
    std::size_t avb_batch = 256;
    std::size_t avb_coords = 1024;  // weight-coordinate subsample per estimate

    bool kl_only = false;  // drop the likelihood term (prior-matching runs)
};

struct StepRecord {
    std::size_t step = 0;
    double nll = 0.0, kl = 0.0, anneal = 0.0, loss = 0.0;
};

using StepCallback = std::function<void(const StepRecord&)>;

struct TrainResult {
    std::unique_ptr<Posterior> posterior;
    std::vector<StepRecord> log;
};

/// Linear ramp min(1, step / (fraction * total_steps)); fraction 0 pins 1.
double anneal_factor(std::size_t step, std::size_t total_steps, double fraction);

/// nll + anneal * kl_scale * kl
Tensor elbo_loss(const Tensor& nll, const Tensor& kl, double anneal, double kl_scale);

/// Bias-corrected Adam. One state drives one parameter collection; moments
/// are keyed by parameter name and the step counter is shared.
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    std::size_t t = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

/// Applies one Adam step to every parameter with an entry in `grads`.
void adam_step(AdamState& state, std::vector<NamedTensor>& params,
               const std::map<std::string, Tensor>& grads, double lr);

/// ELBO training of the method's posterior family on the given data.
TrainResult train(const TrainConfig& config, const NetworkSpec& spec, const Dataset& data,
                  const StepCallback& callback = {});

/// k independent MAP trainings with seeds seed+0..k-1.
TrainResult train_ensemble(const TrainConfig& config, const NetworkSpec& spec,
                           const Dataset& data, std::size_t k);

/// Mean batch negative log-likelihood: softmax cross-entropy for labelled
/// data, unit-variance Gaussian (squared error / 2) for regression targets.
Tensor batch_nll(const NetworkSpec& spec, const WeightSet& weights, const Dataset& batch);

}  // namespace bbh

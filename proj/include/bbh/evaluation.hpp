#pragma once

#include <span>
#include <string>
#include <vector>

#include "bbh/autograd.hpp"
#include "bbh/posterior.hpp"

namespace bbh {

/// Posterior-averaged class probabilities with per-example entropies
/// normalized by the maximum entropy log C.
struct PredictiveResult {
    Tensor probs;  // {N, C}, rows sum to 1
    std::size_t samples = 0;
    std::vector<double> entropy;  // normalized, in [0, 1]
};

/// Mean over S posterior weight samples of softmax(apply_network(...)).
/// Point posteriors collapse to a single forward pass; ensembles average
/// their members exactly once each.
PredictiveResult predictive_distribution(Posterior& posterior, const Tensor& inputs,
                                         std::size_t samples, Rng& rng);

/// H = -sum p log p with 0 log 0 := 0; normalized divides by log C.
double predictive_entropy(std::span<const double> probs, bool normalize);

/// Exact integral over [0, 1] of the empirical CDF of the entropies.
/// 1 means all mass at zero entropy (confident), 0 means all mass at one.
double entropy_cdf_auc(std::span<const double> entropies);

/// Fast gradient sign attack: x + eps * sign(mean-over-samples input
/// gradient of the cross-entropy), clipped to [0, 1]; sign(0) := 0.
Tensor fgsm_attack(Posterior& posterior, const Tensor& inputs, const std::vector<int>& labels,
                   double eps, std::size_t samples, Rng& rng);

struct AdversarialSweep {
    std::vector<double> epsilons;
    std::vector<double> accuracy;
    std::vector<double> mean_entropy;  // normalized
};

/// Accuracy and mean normalized entropy of the posterior-averaged
/// prediction on FGSM-attacked inputs, per epsilon.
AdversarialSweep adversarial_sweep(Posterior& posterior, const Tensor& inputs,
                                   const std::vector<int>& labels,
                                   const std::vector<double>& epsilons, std::size_t samples,
                                   Rng& rng);

/// Flat coordinate range within one named weight tensor.
struct WeightSelector {
    std::string name;
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive; 0 means "to the end"
};

struct WeightHistogram {
    std::string label;
    double lo = 0.0, hi = 0.0;
    std::vector<std::size_t> counts;  // 64 bins
};

struct WeightDiagnostics {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> samples;  // per coordinate, S values
    std::vector<WeightHistogram> histograms;
    std::vector<double> correlation;  // row-major square matrix
};

/// Per-coordinate sample histograms (64 bins over the observed range) and
/// the pairwise Pearson correlation matrix; zero-variance coordinates get
/// correlation 0 by convention.
WeightDiagnostics weight_diagnostics(Posterior& posterior, std::size_t samples,
                                     const std::vector<WeightSelector>& selection, Rng& rng);

struct RegressionPredictive {
    std::vector<double> mean;
    std::vector<double> stdev;
};

/// Mean and standard deviation over S sampled functions at each input row.
RegressionPredictive predictive_regression(Posterior& posterior, const Tensor& inputs,
                                           std::size_t samples, Rng& rng);

/// Fraction of rows whose argmax probability matches the label.
double accuracy(const Tensor& probs, const std::vector<int>& labels);

}  // namespace bbh

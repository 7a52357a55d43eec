#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bbh/config.hpp"
#include "bbh/evaluation.hpp"
#include "bbh/report.hpp"

namespace bbh {

/// Everything a classification run produces, for callers that want the
/// numbers as well as the files.
struct ExperimentOutcome {
    MetricsRow metrics;
    AdversarialSweep sweep;
    std::string checkpoint_path;
};

/// Trains per config, evaluates in-distribution and outlier uncertainty,
/// runs the adversarial sweep and diagnostics, and writes metrics.csv,
/// sweep.csv, training_log.csv, diagnostics CSVs, SVG plots, a checkpoint
/// and a manifest into config.out_dir.
ExperimentOutcome run_experiment(const ExperimentConfig& config, std::ostream& log);

/// Toy-regression pipeline: trains on the cubic set and writes
/// toy_predictive.csv (x, mean, std), toy.svg, a checkpoint and a manifest.
void run_toy(const ExperimentConfig& config, std::ostream& log);

/// Re-evaluates a checkpoint (optionally overriding the outlier set).
MetricsRow run_eval(const std::string& checkpoint_path, const std::string& outlier_override,
                    std::ostream& log);

/// Adversarial sweep from a checkpoint over the given epsilon grid.
AdversarialSweep run_attack(const std::string& checkpoint_path, const std::vector<double>& eps,
                            std::ostream& log);

/// Posterior-weight diagnostics from a checkpoint. Selector syntax:
/// name | name[i] | name[a:b], comma-separated; empty selects the first
/// coordinates of the first layer kernel.
WeightDiagnostics run_diagnose(const std::string& checkpoint_path, const std::string& selector,
                               std::size_t samples, std::ostream& log);

/// Runs every *.cfg in a directory and writes grid_summary.csv there.
void run_grid(const std::string& dir, std::ostream& log);

/// Parses the diagnose weight selector syntax.
std::vector<WeightSelector> parse_weight_selector(const std::string& text);

}  // namespace bbh

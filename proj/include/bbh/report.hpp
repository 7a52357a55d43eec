#pragma once

#include <string>
#include <vector>

#include "bbh/evaluation.hpp"
#include "bbh/training.hpp"

namespace bbh {

/// One metrics.csv row; schema method, error_pct, in_auc, outlier_auc,
/// runtime_s, seed.
struct MetricsRow {
    std::string method;
    double error_pct = 0.0;
    double in_auc = 0.0;
    double outlier_auc = 0.0;
    double runtime_s = 0.0;
    std::uint64_t seed = 0;
};

std::string metrics_csv(const MetricsRow& row);
std::string sweep_csv(const AdversarialSweep& sweep);
std::string training_log_csv(const std::vector<StepRecord>& log);
std::string toy_predictive_csv(const std::vector<double>& xs, const RegressionPredictive& pred);
std::string histogram_csv(const WeightDiagnostics& diag);
std::string correlation_csv(const WeightDiagnostics& diag);

/// Minimal standalone SVG line chart: solid accuracy, dashed mean entropy.
std::string sweep_svg(const AdversarialSweep& sweep);

/// Toy regression view: solid predictive mean, dashed mean +/- 2 std, dots
/// for the training points.
std::string toy_svg(const std::vector<double>& xs, const RegressionPredictive& pred,
                    const std::vector<double>& train_x, const std::vector<double>& train_y);

void write_text_file(const std::string& path, const std::string& content);

/// List of every artifact a run produced, one path per line.
void write_manifest(const std::string& path, const std::vector<std::string>& files);

}  // namespace bbh

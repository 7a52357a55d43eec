#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bbh/nets.hpp"
#include "bbh/training.hpp"

namespace bbh {

/// Full description of one experiment run, resolved from the flat
/// `section.key = value` config format.
struct ExperimentConfig {
    enum class NetKind { mlp, lenet };
    enum class DataKind { toy, idx, synth };

    TrainConfig train;  // method, optimizer, sampling and annealing settings

    NetKind net_kind = NetKind::mlp;
    std::vector<std::size_t> mlp_extents = {784, 64, 10};
    std::size_t lenet_classes = 10;

    DataKind data_kind = DataKind::synth;
    std::string train_images, train_labels, test_images, test_labels, outlier_images;
    std::size_t train_count = 10000;
    std::size_t test_count = 2000;
    std::size_t outlier_count = 2000;
    std::size_t toy_points = 20;
    double toy_x_lo = -4.0, toy_x_hi = 4.0, toy_noise_std = 3.0;

    std::size_t eval_samples = 100;
    std::vector<double> eps_grid = {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4};
    std::size_t attack_count = 1000;
    std::size_t attack_samples = 100;
    std::size_t diag_samples = 1000;
    std::size_t diag_coords = 25;

    std::string out_dir = "runs/out";
    std::uint64_t seed = 1;
};

/// Parses the flat config text. Unknown keys, duplicate keys, syntax errors
/// and invalid values are ConfigErrors naming the line or field; missing
/// keys take the documented defaults (learning rate and KL annealing resolve
/// per method).
ExperimentConfig parse_config(const std::string& text);

ExperimentConfig load_config(const std::string& path);

/// Resolved config as sorted `key = value` lines; parse_config inverts it.
std::string serialize_config(const ExperimentConfig& config);

NetworkSpec build_network(const ExperimentConfig& config);

}  // namespace bbh

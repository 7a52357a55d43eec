#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bbh/autograd.hpp"

namespace bbh {

/// Immutable dataset: inputs plus either class labels or regression targets.
struct Dataset {
    Tensor inputs;                 // {N, ...}
    std::vector<int> labels;       // classification targets in [0, C)
    std::vector<double> targets;   // regression targets
    std::string split;
    std::string provenance;

    std::size_t size() const { return inputs.rank() ? inputs.shape()[0] : 0; }
    bool classification() const { return !labels.empty(); }
};

/// 1-D cubic toy set: x ~ U(x_lo, x_hi), y = x^3 + N(0, noise_std^2).
Dataset toy_regression(std::size_t n_points, double x_lo, double x_hi, double noise_std,
                       std::uint64_t seed);

/// Parses a big-endian IDX file of unsigned bytes into a real-valued tensor.
Tensor load_idx(const std::string& path);

/// Writes a tensor of integer values in [0, 255] as an IDX ubyte file.
void write_idx(const std::string& path, const Tensor& t);

/// Maps byte values [0, 255] to [0, 1].
Tensor normalize(const Tensor& images);

/// Per-epoch shuffled index batches keyed by (seed, epoch). Every index
/// appears exactly once per epoch; the final short batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

/// Gathers the given example rows (and their targets) into a batch.
Dataset take(const Dataset& data, const std::vector<std::size_t>& idx);

/// First-n prefix of a dataset (0 keeps everything).
Dataset subset(const Dataset& data, std::size_t count);

/// Deterministic 10-class 28x28 image task (byte-valued pixels): per-class
/// oriented gratings with amplitude jitter, pixel noise and small shifts.
/// Stands in for file-based digit data when no IDX paths are configured.
Dataset synthetic_digits(std::size_t count, std::uint64_t seed, const std::string& split);

/// Uniform-noise byte images, the built-in outlier fallback.
Dataset uniform_noise_images(std::size_t count, std::size_t height, std::size_t width,
                             std::uint64_t seed);

/// Classification dataset from IDX image/label files, values kept as bytes.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         const std::string& split);

}  // namespace bbh

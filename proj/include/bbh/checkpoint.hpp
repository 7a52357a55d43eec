#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bbh/config.hpp"
#include "bbh/posterior.hpp"

namespace bbh {

/// On-disk layout: magic "BBH1", u32 LE format version, u64 LE metadata
/// length, metadata text (resolved config plus tensor manifest), then one
/// little-endian 64-bit real array per tensor in manifest order.
struct Checkpoint {
    ExperimentConfig config;
    std::vector<NamedTensor> tensors;
};

void save_checkpoint(const std::string& path, const ExperimentConfig& config,
                     const std::vector<NamedTensor>& tensors);

Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the posterior family described by the checkpoint's config and
/// overwrites its parameters with the stored tensors, bit for bit.
std::unique_ptr<Posterior> restore_posterior(const Checkpoint& checkpoint);

/// Convenience: posterior parameters + config to disk.
void save_posterior(const std::string& path, const ExperimentConfig& config,
                    const Posterior& posterior);

}  // namespace bbh

#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bbh/autograd.hpp"
#include "bbh/nets.hpp"

namespace bbh {

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Per-step sampling context. With a tape attached, parameter reads become
/// tracked leaves (cached by name) so gradients can reach them; without one,
/// sampling is a plain numeric forward pass.
class SampleCtx {
public:
    SampleCtx() = default;
    explicit SampleCtx(Rng& rng) : rng_(&rng) {}
    explicit SampleCtx(Tape& tape) : tape_(&tape) {}
    SampleCtx(Tape& tape, Rng& rng) : tape_(&tape), rng_(&rng) {}

    bool tracked() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    Rng& rng() {
        if (!rng_) throw ContractError("sampling context carries no rng");
        return *rng_;
    }

    Tensor param(const std::string& name, const Tensor& value);
    const std::map<std::string, Tensor>& leaves() const { return leaves_; }

private:
    Tape* tape_ = nullptr;
    Rng* rng_ = nullptr;
    std::map<std::string, Tensor> leaves_;
};

/// Variational family over a NetworkSpec's WeightSet.
class Posterior {
public:
    virtual ~Posterior() = default;

    virtual std::string family() const = 0;
    virtual std::vector<WeightSet> sample(SampleCtx& ctx, std::size_t count) = 0;

    const NetworkSpec& network() const { return spec_; }
    std::vector<NamedTensor>& parameters() { return params_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }

    NamedTensor& param(const std::string& name);

protected:
    explicit Posterior(NetworkSpec spec) : spec_(std::move(spec)) {}
    void add_param(std::string name, Tensor value);

    NetworkSpec spec_;
    std::vector<NamedTensor> params_;
    std::map<std::string, std::size_t> param_index_;
};

// ---------------------------------------------------------------------------
// Hypernet posterior (implicit distribution)
// ---------------------------------------------------------------------------

struct HypernetConfig {
    enum class Arch { single, layer_wise, sliced_layer_wise };
    enum class NoiseMode { shared, independent };

    Arch arch = Arch::layer_wise;
    std::vector<std::size_t> hidden = {64, 256, 512};
    std::size_t noise_dim = 1;
    NoiseMode noise_mode = NoiseMode::independent;
};

/// One unit-Gaussian noise vector per generator call. Shared mode reuses a
/// single draw across every call of one weight sample.
std::vector<std::vector<double>> make_noise(const HypernetConfig& config, std::size_t calls,
                                            Rng& rng);

/// Weights of the main network produced by generator MLPs fed auxiliary
/// noise (optionally with a one-hot slice conditioning vector).
class HypernetPosterior : public Posterior {
public:
    HypernetPosterior(HypernetConfig config, NetworkSpec spec, Rng& rng);

    std::string family() const override { return "hypernet"; }
    std::vector<WeightSet> sample(SampleCtx& ctx, std::size_t count) override;

    const HypernetConfig& config() const { return config_; }
    std::size_t generator_count() const { return generators_.size(); }
    std::size_t conditioning_length(std::size_t gen) const;
    std::size_t noise_calls_per_sample() const;

    /// Single generator call on concat(z, c); returns the flattened weight
    /// slice that call produces.
    Tensor generate(SampleCtx& ctx, std::size_t gen, const std::vector<double>& z,
                    const std::vector<double>& conditioning);

private:
    struct Generator {
        std::vector<std::size_t> dims;  // in, hidden..., out
        std::size_t cond_len = 0;
    };

    Tensor forward(SampleCtx& ctx, std::size_t gen, const Tensor& input) const;
    WeightSet sample_one(SampleCtx& ctx);

    HypernetConfig config_;
    std::vector<Generator> generators_;
};

/// Free-function form of HypernetPosterior::generate.
Tensor hypernet_generate(HypernetPosterior& posterior, SampleCtx& ctx, std::size_t gen,
                         const std::vector<double>& z, const std::vector<double>& conditioning);

// ---------------------------------------------------------------------------
// Baseline posteriors
// ---------------------------------------------------------------------------

/// mu + softplus(rho) * eps
double reparam_sample(double mu, double rho, double eps);

class FactorizedGaussianPosterior : public Posterior {
public:
    FactorizedGaussianPosterior(NetworkSpec spec, Rng& rng, double init_sigma = 0.05);

    std::string family() const override { return "gaussian"; }
    std::vector<WeightSet> sample(SampleCtx& ctx, std::size_t count) override;

    /// Sum over weights of KL(N(mu, softplus(rho)^2) || N(0, 1)).
    Tensor analytical_kl(SampleCtx& ctx);

    const Tensor& mu(const std::string& weight_name) const;
    const Tensor& rho(const std::string& weight_name) const;
    double sigma_at(const std::string& weight_name, std::size_t i) const;
};

class DropoutPosterior : public Posterior {
public:
    DropoutPosterior(NetworkSpec spec, double rate, Rng& rng);

    std::string family() const override { return "dropout"; }
    std::vector<WeightSet> sample(SampleCtx& ctx, std::size_t count) override;

    double rate() const { return rate_; }
    /// Point weights as tracked leaves (or plain values), for the L2 prior.
    WeightSet point_weights(SampleCtx& ctx);

private:
    double rate_;
};

class PointPosterior : public Posterior {
public:
    PointPosterior(NetworkSpec spec, Rng& rng);

    std::string family() const override { return "point"; }
    std::vector<WeightSet> sample(SampleCtx& ctx, std::size_t count) override;

    WeightSet point_weights(SampleCtx& ctx);
};

/// Container of k trained point members; sampling cycles through members.
class EnsemblePosterior : public Posterior {
public:
    EnsemblePosterior(NetworkSpec spec, std::vector<WeightSet> members);

    std::string family() const override { return "ensemble"; }
    std::vector<WeightSet> sample(SampleCtx& ctx, std::size_t count) override;

    std::size_t members() const { return members_; }

private:
    std::size_t members_ = 0;
};

/// Standard-init point weights: kernels ~ N(0, 1/fan_in), biases 0.
WeightSet init_point_weights(const NetworkSpec& spec, Rng& rng);

}  // namespace bbh

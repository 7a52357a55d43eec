#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bbh/autograd.hpp"
#include "bbh/posterior.hpp"
#include "bbh/training.hpp"

namespace bbh {

struct PriorSpec {
    enum class Family { standard_normal };
    Family family = Family::standard_normal;
};

/// Posterior samples w_q (n x d) against prior samples w_p (m x d).
struct SampleBatch {
    Tensor wq;
    Tensor wp;

    std::size_t n() const { return wq.shape()[0]; }
    std::size_t m() const { return wp.shape()[0]; }
    std::size_t dim() const { return wq.shape()[1]; }
};

SampleBatch make_sample_batch(Tensor wq, Tensor wp);

/// Nearest-neighbour KL estimate
///   (d/n) * sum_i log( min_j ||wq_i - wp_j|| / min_{j != i} ||wq_i - wq_j|| )
///   + log(m / (n - 1))
/// with distances floored at 1e-12. Differentiable w.r.t. w_q through the
/// selected nearest-neighbour pairs (argmin treated as locally constant,
/// ties to first index; floored distances pass no gradient).
Tensor knn_kl_estimate(const SampleBatch& batch);

/// Sum over the K columns of the d=1 estimate, treating each column as an
/// independent scalar weight: wq is n x K, wp is m x K.
Tensor knn_kl_percoord_sum(const Tensor& wq, const Tensor& wp);

/// Draws n WeightSets from the posterior and m standard-normal prior samples
/// per weight coordinate, then sums the per-coordinate d=1 estimates.
Tensor per_weight_knn_kl(Posterior& posterior, const PriorSpec& prior, std::size_t n,
                         std::size_t m, SampleCtx& ctx);

/// KL(N(mu1, sigma1^2) || N(mu2, sigma2^2)).
double gaussian_kl_analytical(double mu1, double sigma1, double mu2, double sigma2);

/// Trapezoidal integral of q * (log q - log p) over [lo, hi].
double quadrature_kl_oracle(const std::function<double(double)>& log_q,
                            const std::function<double(double)>& log_p, double lo, double hi,
                            std::size_t points);

// ---------------------------------------------------------------------------
// Adversarial (discriminator) density-ratio estimation
// ---------------------------------------------------------------------------

struct DiscriminatorSchedule {
    std::size_t pretrain_steps = 100;
    std::size_t ratio = 5;  // discriminator steps per main step when interleaved
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t train_steps = 3000;
    std::size_t batch = 256;
    double lr = 1e-3;
};

/// Scalar-input classifier distinguishing posterior draws (label 1) from
/// prior draws (label 0). Its logit is the log density-ratio estimate.
class Discriminator {
public:
    Discriminator(const std::vector<std::size_t>& hidden, Rng& rng);

    std::vector<NamedTensor>& parameters() { return params_; }

    /// Forward to the pre-sigmoid logit, input and output shaped {B, 1}.
    Tensor logits(SampleCtx& ctx, const Tensor& x) const;

    /// One cross-entropy update on a batch of q values vs p values.
    double train_step(const std::vector<double>& q_values, const std::vector<double>& p_values,
                      AdamState& opt, double lr);

private:
    std::vector<std::size_t> dims_;
    std::vector<NamedTensor> params_;
    std::map<std::string, std::size_t> index_;
};

using ScalarSampler = std::function<std::vector<double>(std::size_t count, Rng& rng)>;

struct DiscriminatorKlResult {
    double estimate = 0.0;
    Discriminator discriminator;
};

/// Trains a discriminator per the schedule, then estimates KL(q || p) as the
/// mean logit over fresh q samples.
DiscriminatorKlResult discriminator_kl_estimate(const ScalarSampler& q_sampler,
                                                const ScalarSampler& p_sampler,
                                                const DiscriminatorSchedule& schedule, Rng& rng);

}  // namespace bbh

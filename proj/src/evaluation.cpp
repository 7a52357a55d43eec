#include "bbh/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "bbh/nets.hpp"

namespace bbh {

namespace {

std::size_t effective_samples(Posterior& posterior, std::size_t requested) {
    if (posterior.family() == "point") return 1;
    if (auto* ens = dynamic_cast<EnsemblePosterior*>(&posterior)) return ens->members();
    return requested;
}

// One weight sample at a time; ensembles enumerate their members once, so
// the member cycle spans the whole evaluation rather than one call.
class SampleStream {
public:
    SampleStream(Posterior& posterior, SampleCtx& ctx, std::size_t total)
        : posterior_(&posterior), ctx_(&ctx) {
        if (dynamic_cast<EnsemblePosterior*>(&posterior)) {
            pool_ = posterior.sample(ctx, total);
        }
    }

    WeightSet next() {
        if (!pool_.empty()) return std::move(pool_[at_++]);
        return posterior_->sample(*ctx_, 1)[0];
    }

private:
    Posterior* posterior_;
    SampleCtx* ctx_;
    std::vector<WeightSet> pool_;
    std::size_t at_ = 0;
};

}  // namespace

PredictiveResult predictive_distribution(Posterior& posterior, const Tensor& inputs,
                                         std::size_t samples, Rng& rng) {
    if (samples == 0) throw ContractError("predictive_distribution: need at least one sample");
    const std::size_t s_eff = effective_samples(posterior, samples);

    SampleCtx ctx(rng);
    SampleStream stream(posterior, ctx, s_eff);
    std::vector<double> acc;
    std::size_t n = 0, c = 0;
    for (std::size_t s = 0; s < s_eff; ++s) {
        WeightSet ws = stream.next();
        Tensor logits = apply_network(posterior.network(), ws, inputs);
        std::vector<double> probs = softmax_rows(logits);
        if (acc.empty()) {
            n = logits.shape()[0];
            c = logits.shape()[1];
            acc.assign(probs.size(), 0.0);
        }
        for (std::size_t i = 0; i < probs.size(); ++i) acc[i] += probs[i];
    }
    for (double& v : acc) v /= double(s_eff);

    PredictiveResult out;
    out.samples = s_eff;
    out.entropy.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        out.entropy[r] =
            predictive_entropy(std::span<const double>(acc.data() + r * c, c), true);
    }
    out.probs = Tensor({n, c}, std::move(acc));
    return out;
}

double predictive_entropy(std::span<const double> probs, bool normalize) {
    if (probs.empty()) throw ContractError("predictive_entropy: empty distribution");
    double h = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw ContractError(msg("predictive_entropy: negative probability ", p));
        if (p > 0.0) h -= p * std::log(p);
    }
    if (!normalize) return h;
    if (probs.size() == 1) return 0.0;
    return h / std::log(double(probs.size()));
}

double entropy_cdf_auc(std::span<const double> entropies) {
    if (entropies.empty()) throw ContractError("entropy_cdf_auc: empty input");
    double acc = 0.0;
    for (double e : entropies) {
        if (e < 0.0 || e > 1.0) {
            throw ContractError(msg("entropy_cdf_auc: value ", e, " outside [0, 1]"));
        }
        // piecewise-constant CDF integrates to mean(1 - e)
        acc += 1.0 - e;
    }
    return acc / double(entropies.size());
}

Tensor fgsm_attack(Posterior& posterior, const Tensor& inputs, const std::vector<int>& labels,
                   double eps, std::size_t samples, Rng& rng) {
    if (eps < 0.0) throw ContractError(msg("fgsm_attack: eps must be nonnegative, got ", eps));
    if (samples == 0) throw ContractError("fgsm_attack: need at least one sample");
    for (double v : inputs.data()) {
        if (v < 0.0 || v > 1.0) {
            throw ContractError("fgsm_attack: inputs must lie in [0, 1]");
        }
    }
    const std::size_t s_eff = effective_samples(posterior, samples);

    std::vector<double> grad(inputs.size(), 0.0);
    SampleCtx sample_ctx(rng);  // weights stay constant on the attack tapes
    SampleStream stream(posterior, sample_ctx, s_eff);
    for (std::size_t s = 0; s < s_eff; ++s) {
        WeightSet ws = stream.next();
        Tape tape;
        Tensor x = tape.leaf(inputs);
        Tensor loss = softmax_cross_entropy(apply_network(posterior.network(), ws, x), labels);
        Tensor g = tape.backward(loss).at(x);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g.data()[i];
    }

    std::vector<double> adv(inputs.size());
    for (std::size_t i = 0; i < adv.size(); ++i) {
        const double m = grad[i] / double(s_eff);
        const double sign = m > 0.0 ? 1.0 : (m < 0.0 ? -1.0 : 0.0);
        adv[i] = std::clamp(inputs.data()[i] + eps * sign, 0.0, 1.0);
    }
    return Tensor(inputs.shape(), std::move(adv));
}

AdversarialSweep adversarial_sweep(Posterior& posterior, const Tensor& inputs,
                                   const std::vector<int>& labels,
                                   const std::vector<double>& epsilons, std::size_t samples,
                                   Rng& rng) {
    if (epsilons.empty()) throw ContractError("adversarial_sweep: empty epsilon grid");
    for (std::size_t i = 0; i < epsilons.size(); ++i) {
        if (epsilons[i] < 0.0 || (i > 0 && epsilons[i] <= epsilons[i - 1])) {
            throw ContractError("adversarial_sweep: epsilons must be nonnegative and increasing");
        }
    }

    // the input gradient does not depend on eps; share one averaged attack
    // direction across the grid. Signs clipped away at the [0, 1] borders
    // perturb nothing for any eps <= 1, so the recovered direction matches
    // a per-eps attack exactly.
    Tensor base = fgsm_attack(posterior, inputs, labels, 1.0, samples, rng);
    std::vector<double> direction(inputs.size());
    for (std::size_t i = 0; i < direction.size(); ++i) {
        direction[i] = base.data()[i] - inputs.data()[i];
    }

    AdversarialSweep sweep;
    sweep.epsilons = epsilons;
    for (double eps : epsilons) {
        std::vector<double> adv(inputs.size());
        for (std::size_t i = 0; i < adv.size(); ++i) {
            const double sign = direction[i] > 0.0 ? 1.0 : (direction[i] < 0.0 ? -1.0 : 0.0);
            adv[i] = std::clamp(inputs.data()[i] + eps * sign, 0.0, 1.0);
        }
        PredictiveResult pred =
            predictive_distribution(posterior, Tensor(inputs.shape(), std::move(adv)), samples,
                                    rng);
        sweep.accuracy.push_back(accuracy(pred.probs, labels));
        double me = 0.0;
        for (double e : pred.entropy) me += e;
        sweep.mean_entropy.push_back(me / double(pred.entropy.size()));
    }
    return sweep;
}

WeightDiagnostics weight_diagnostics(Posterior& posterior, std::size_t samples,
                                     const std::vector<WeightSelector>& selection, Rng& rng) {
    if (samples < 2) throw ContractError("weight_diagnostics: need at least 2 samples");
    if (selection.empty()) throw ContractError("weight_diagnostics: empty selection");

    const auto& infos = posterior.network().weight_infos();
    auto info_of = [&](const std::string& name) -> const WeightInfo& {
        for (const WeightInfo& info : infos) {
            if (info.name == name) return info;
        }
        throw ContractError(msg("weight_diagnostics: unknown weight '", name, "'"));
    };

    WeightDiagnostics diag;
    std::vector<std::pair<std::string, std::size_t>> coords;  // (name, flat index)
    for (const WeightSelector& sel : selection) {
        const WeightInfo& info = info_of(sel.name);
        const std::size_t total = shape_size(info.shape);
        const std::size_t end = sel.end == 0 ? total : sel.end;
        if (sel.begin >= end || end > total) {
            throw IndexError(msg("weight_diagnostics: range [", sel.begin, ", ", end,
                                 ") invalid for '", sel.name, "' of size ", total));
        }
        for (std::size_t i = sel.begin; i < end; ++i) {
            coords.emplace_back(sel.name, i);
            diag.labels.push_back(msg(sel.name, "[", i, "]"));
        }
    }

    const std::size_t k = coords.size();
    diag.samples.assign(k, {});
    SampleCtx ctx(rng);
    SampleStream stream(posterior, ctx, samples);
    for (std::size_t s = 0; s < samples; ++s) {
        WeightSet ws = stream.next();
        for (std::size_t j = 0; j < k; ++j) {
            diag.samples[j].push_back(ws.at(coords[j].first).data()[coords[j].second]);
        }
    }

    constexpr std::size_t kBins = 64;
    for (std::size_t j = 0; j < k; ++j) {
        WeightHistogram h;
        h.label = diag.labels[j];
        h.counts.assign(kBins, 0);
        const auto [mn, mx] = std::minmax_element(diag.samples[j].begin(), diag.samples[j].end());
        h.lo = *mn;
        h.hi = *mx;
        const double width = h.hi - h.lo;
        for (double v : diag.samples[j]) {
            std::size_t bin = width == 0.0
                                  ? 0
                                  : std::min(kBins - 1, std::size_t((v - h.lo) / width * kBins));
            ++h.counts[bin];
        }
        diag.histograms.push_back(std::move(h));
    }

    // Pearson correlations; zero-variance coordinates (identical samples,
    // detected exactly via the observed range) are 0 by convention
    std::vector<double> means(k, 0.0), vars(k, 0.0);
    std::vector<bool> constant(k);
    for (std::size_t j = 0; j < k; ++j) {
        constant[j] = (diag.histograms[j].lo == diag.histograms[j].hi);
        for (double v : diag.samples[j]) means[j] += v;
        means[j] /= double(samples);
        for (double v : diag.samples[j]) vars[j] += (v - means[j]) * (v - means[j]);
    }
    diag.correlation.assign(k * k, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
            if (constant[a] || constant[b] || vars[a] == 0.0 || vars[b] == 0.0) continue;
            double cov = 0.0;
            for (std::size_t s = 0; s < samples; ++s) {
                cov += (diag.samples[a][s] - means[a]) * (diag.samples[b][s] - means[b]);
            }
            diag.correlation[a * k + b] = cov / std::sqrt(vars[a] * vars[b]);
        }
    }
    return diag;
}

RegressionPredictive predictive_regression(Posterior& posterior, const Tensor& inputs,
                                           std::size_t samples, Rng& rng) {
    if (samples < 2) throw ContractError("predictive_regression: need at least 2 samples");
    const std::size_t s_eff = std::max<std::size_t>(2, effective_samples(posterior, samples));
    const std::size_t n = inputs.shape()[0];

    std::vector<double> acc(n, 0.0), acc2(n, 0.0);
    SampleCtx ctx(rng);
    SampleStream stream(posterior, ctx, s_eff);
    for (std::size_t s = 0; s < s_eff; ++s) {
        WeightSet ws = stream.next();
        Tensor out = apply_network(posterior.network(), ws, inputs);
        for (std::size_t i = 0; i < n; ++i) {
            acc[i] += out.data()[i];
            acc2[i] += out.data()[i] * out.data()[i];
        }
    }
    RegressionPredictive pred;
    pred.mean.resize(n);
    pred.stdev.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        pred.mean[i] = acc[i] / double(s_eff);
        const double var = std::max(0.0, acc2[i] / double(s_eff) - pred.mean[i] * pred.mean[i]);
        pred.stdev[i] = std::sqrt(var);
    }
    return pred;
}

double accuracy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2 || probs.shape()[0] != labels.size()) {
        throw DimensionError(msg("accuracy: probs ", shape_str(probs.shape()), " vs ",
                                 labels.size(), " labels"));
    }
    const std::size_t n = probs.shape()[0], c = probs.shape()[1];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (probs.data()[i * c + j] > probs.data()[i * c + best]) best = j;
        }
        hits += (static_cast<int>(best) == labels[i]);
    }
    return double(hits) / double(n);
}

}  // namespace bbh

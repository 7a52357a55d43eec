#include "bbh/training.hpp"

#include <algorithm>
#include <cmath>

#include "bbh/divergence.hpp"

namespace bbh {

std::string method_name(Method m) {
    switch (m) {
        case Method::bbh: return "bbh";
        case Method::bbb: return "bbb";
        case Method::bbb_kernel: return "bbb_kernel";
        case Method::bbb_avb: return "bbb_avb";
        case Method::dropout: return "dropout";
        case Method::map: return "map";
        case Method::ensemble: return "ensemble";
    }
    throw ContractError("unknown method enum value");
}

Method method_from(const std::string& name) {
    for (Method m : {Method::bbh, Method::bbb, Method::bbb_kernel, Method::bbb_avb,
                     Method::dropout, Method::map, Method::ensemble}) {
        if (method_name(m) == name) return m;
    }
    throw ConfigError(msg("unknown method '", name, "'"));
}

double anneal_factor(std::size_t step, std::size_t total_steps, double fraction) {
    if (total_steps == 0) throw ContractError("anneal_factor: total_steps must be positive");
    if (fraction < 0.0 || fraction > 1.0) {
        throw ContractError(msg("anneal_factor: fraction ", fraction, " outside [0, 1]"));
    }
    if (fraction == 0.0) return 1.0;
    return std::min(1.0, double(step) / (fraction * double(total_steps)));
}

Tensor elbo_loss(const Tensor& nll, const Tensor& kl, double anneal, double kl_scale) {
    if (anneal < 0.0 || anneal > 1.0) {
        throw ContractError(msg("elbo_loss: anneal ", anneal, " outside [0, 1]"));
    }
    if (kl_scale <= 0.0) {
        throw ContractError(msg("elbo_loss: kl_scale must be positive, got ", kl_scale));
    }
    return add(nll, scale(kl, anneal * kl_scale));
}

void adam_step(AdamState& state, std::vector<NamedTensor>& params,
               const std::map<std::string, Tensor>& grads, double lr) {
    if (lr <= 0.0) throw ContractError(msg("adam_step: learning rate must be positive, got ", lr));
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (NamedTensor& p : params) {
        auto it = grads.find(p.name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (g.shape() != p.value.shape()) {
            throw ContractError(msg("adam_step: gradient shape ", shape_str(g.shape()),
                                    " does not match parameter '", p.name, "' shape ",
                                    shape_str(p.value.shape())));
        }
        auto& [m, v] = state.moments[p.name];
        if (m.empty()) {
            m.assign(p.value.size(), 0.0);
            v.assign(p.value.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double gi = g.data()[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            p.value.data()[i] -=
                lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.epsilon);
        }
    }
}

Tensor batch_nll(const NetworkSpec& spec, const WeightSet& weights, const Dataset& batch) {
    Tensor out = apply_network(spec, weights, batch.inputs);
    if (batch.classification()) {
        return softmax_cross_entropy(out, batch.labels);
    }
    if (batch.targets.empty()) throw ContractError("batch carries neither labels nor targets");
    Tensor target({batch.targets.size(), 1}, batch.targets);
    Tensor diff = sub(out, target);
    return scale(mean(mul(diff, diff)), 0.5);  // unit observation noise
}

namespace {

std::unique_ptr<Posterior> make_posterior(const TrainConfig& cfg, const NetworkSpec& spec,
                                          Rng& rng) {
    switch (cfg.method) {
        case Method::bbh:
            return std::make_unique<HypernetPosterior>(cfg.hypernet, spec, rng);
        case Method::bbb:
        case Method::bbb_kernel:
        case Method::bbb_avb:
            return std::make_unique<FactorizedGaussianPosterior>(spec, rng,
                                                                 cfg.gaussian_init_sigma);
        case Method::dropout:
            return std::make_unique<DropoutPosterior>(spec, cfg.dropout_rate, rng);
        case Method::map:
            return std::make_unique<PointPosterior>(spec, rng);
        case Method::ensemble:
            break;
    }
    throw TrainError("ensemble training goes through train_ensemble");
}

Tensor l2_prior_penalty(const WeightSet& point) {
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& [name, w] : point) acc = add(acc, scale(sum(mul(w, w)), 0.5));
    return acc;
}

std::vector<double> flatten_weight_set(const NetworkSpec& spec, const WeightSet& ws) {
    std::vector<double> pool;
    for (const WeightInfo& info : spec.weight_infos()) {
        const auto& d = ws.at(info.name).data();
        pool.insert(pool.end(), d.begin(), d.end());
    }
    return pool;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const NetworkSpec& spec, const Dataset& data,
                  const StepCallback& callback) {
    if (cfg.method == Method::ensemble) {
        return train_ensemble(cfg, spec, data, cfg.ensemble_k);
    }
    if (cfg.lr <= 0.0) throw ContractError("train: learning rate must be positive");
    if (cfg.batch == 0) throw ContractError("train: batch size must be positive");
    if (cfg.steps == 0) throw ContractError("train: need at least one step");
    if (data.size() == 0 && !cfg.kl_only) throw ContractError("train: dataset is empty");

    Rng rng = make_rng(cfg.seed, 0x7421);
    std::unique_ptr<Posterior> posterior = make_posterior(cfg, spec, rng);
    const double kl_scale =
        cfg.kl_scale > 0.0 ? cfg.kl_scale : 1.0 / double(std::max<std::size_t>(data.size(), 1));
    const std::size_t total_coords = spec.param_count();

    AdamState opt;
    PriorSpec prior;

    // adversarial density-ratio path
    std::unique_ptr<Discriminator> disc;
    AdamState disc_opt;
    auto q_scalar_batch = [&](std::size_t count) {
        SampleCtx sctx(rng);
        std::vector<double> pool = flatten_weight_set(spec, posterior->sample(sctx, 1)[0]);
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        std::vector<double> out(count);
        for (double& v : out) v = pool[pick(rng)];
        return out;
    };
    auto p_scalar_batch = [&](std::size_t count) {
        std::vector<double> out(count);
        for (double& v : out) v = gauss(rng);
        return out;
    };
    if (cfg.method == Method::bbb_avb) {
        disc = std::make_unique<Discriminator>(std::vector<std::size_t>{64, 64}, rng);
        for (std::size_t s = 0; s < cfg.avb_pretrain; ++s) {
            disc->train_step(q_scalar_batch(cfg.avb_batch), p_scalar_batch(cfg.avb_batch),
                             disc_opt, 1e-3);
        }
    }

    auto kl_term = [&](SampleCtx& ctx) -> Tensor {
        switch (cfg.method) {
            case Method::bbh:
            case Method::bbb_kernel:
                return per_weight_knn_kl(*posterior, prior, cfg.kl_samples, cfg.prior_samples,
                                         ctx);
            case Method::bbb:
                return static_cast<FactorizedGaussianPosterior&>(*posterior).analytical_kl(ctx);
            case Method::bbb_avb: {
                auto samples = posterior->sample(ctx, cfg.kl_samples);
                const std::size_t picked = std::min(cfg.avb_coords, total_coords);
                std::vector<std::size_t> idx(picked);
                if (picked == total_coords) {
                    for (std::size_t i = 0; i < picked; ++i) idx[i] = i;
                } else {
                    std::uniform_int_distribution<std::size_t> pick(0, total_coords - 1);
                    for (std::size_t& i : idx) i = pick(rng);
                }
                std::vector<Tensor> parts;
                parts.reserve(samples.size());
                for (const WeightSet& ws : samples) {
                    std::vector<Tensor> flats;
                    for (const WeightInfo& info : spec.weight_infos()) {
                        flats.push_back(reshape(ws.at(info.name), {shape_size(info.shape)}));
                    }
                    parts.push_back(gather1d(concat1d(flats), idx));
                }
                Tensor x = reshape(concat1d(parts), {samples.size() * picked, 1});
                SampleCtx dctx;  // discriminator weights stay constant here
                Tensor logits = disc->logits(dctx, x);
                return scale(sum(logits),
                             double(total_coords) / (double(picked) * double(samples.size())));
            }
            case Method::dropout: {
                auto& dp = static_cast<DropoutPosterior&>(*posterior);
                return l2_prior_penalty(dp.point_weights(ctx));
            }
            case Method::map: {
                auto& pp = static_cast<PointPosterior&>(*posterior);
                return l2_prior_penalty(pp.point_weights(ctx));
            }
            case Method::ensemble:
                break;
        }
        throw TrainError("unreachable kl dispatch");
    };

    TrainResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; step < cfg.steps; ++epoch) {
        std::vector<std::vector<std::size_t>> batches;
        if (cfg.kl_only || data.size() == 0) {
            batches.assign(1, {});
        } else {
            batches = batch_indices(data.size(), cfg.batch, cfg.seed, epoch);
        }
        for (const auto& bidx : batches) {
            if (step >= cfg.steps) break;

            if (cfg.method == Method::bbb_avb) {
                for (std::size_t s = 0; s < cfg.avb_ratio; ++s) {
                    disc->train_step(q_scalar_batch(cfg.avb_batch),
                                     p_scalar_batch(cfg.avb_batch), disc_opt, 1e-3);
                }
            }

            Tape tape;
            SampleCtx ctx(tape, rng);
            const char* term = "nll";
            try {
                Tensor nll = Tensor::scalar(0.0);
                if (!cfg.kl_only) {
                    Dataset batch = take(data, bidx);
                    WeightSet ws = posterior->sample(ctx, 1)[0];
                    nll = batch_nll(spec, ws, batch);
                }
                term = "kl";
                Tensor kl = kl_term(ctx);
                term = "loss";
                const double af = anneal_factor(step, cfg.steps, cfg.anneal_fraction);
                Tensor loss = elbo_loss(nll, kl, af, kl_scale);

                Gradients grads = tape.backward(loss);
                std::map<std::string, Tensor> by_name;
                for (const auto& [name, leaf] : ctx.leaves()) by_name.emplace(name, grads.at(leaf));
                adam_step(opt, posterior->parameters(), by_name, cfg.lr);

                StepRecord rec{step, nll.item(), kl.item(), af, loss.item()};
                result.log.push_back(rec);
                if (callback) callback(rec);
            } catch (const NumericError& e) {
                throw TrainError(msg("non-finite ", term, " at step ", step, ": ", e.what()));
            }
            ++step;
        }
    }
    result.posterior = std::move(posterior);
    return result;
}

TrainResult train_ensemble(const TrainConfig& cfg, const NetworkSpec& spec, const Dataset& data,
                           std::size_t k) {
    if (k < 1) throw ContractError("train_ensemble: need at least one member");
    std::vector<WeightSet> members;
    members.reserve(k);
    TrainResult out;
    for (std::size_t i = 0; i < k; ++i) {
        TrainConfig member = cfg;
        member.method = Method::map;
        member.seed = cfg.seed + i;
        TrainResult r = train(member, spec, data);
        SampleCtx plain;
        members.push_back(static_cast<PointPosterior&>(*r.posterior).point_weights(plain));
        out.log.insert(out.log.end(), r.log.begin(), r.log.end());
    }
    out.posterior = std::make_unique<EnsemblePosterior>(spec, std::move(members));
    return out;
}

}  // namespace bbh

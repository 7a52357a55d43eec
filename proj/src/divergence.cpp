#include "bbh/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bbh {

namespace {

constexpr double kDistFloor = 1e-12;

void validate_batch(const Tensor& wq, const Tensor& wp) {
    if (wq.rank() != 2 || wp.rank() != 2) {
        throw DimensionError(msg("kernel KL: sample matrices must be rank-2, got ",
                                 shape_str(wq.shape()), " and ", shape_str(wp.shape())));
    }
    if (wq.shape()[1] != wp.shape()[1]) {
        throw DimensionError(msg("kernel KL: sample dimensionality differs, ",
                                 shape_str(wq.shape()), " vs ", shape_str(wp.shape())));
    }
    if (wq.shape()[0] < 2) {
        throw ContractError(msg("kernel KL: need at least 2 posterior samples, got ",
                                wq.shape()[0]));
    }
    if (wp.shape()[0] < 1) throw ContractError("kernel KL: need at least 1 prior sample");
    if (wp.tracked()) throw ContractError("kernel KL: prior samples must be constants");
}

}  // namespace

SampleBatch make_sample_batch(Tensor wq, Tensor wp) {
    validate_batch(wq, wp);
    return SampleBatch{std::move(wq), std::move(wp)};
}

Tensor knn_kl_estimate(const SampleBatch& batch) {
    const Tensor& wq = batch.wq;
    const Tensor& wp = batch.wp;
    validate_batch(wq, wp);
    const std::size_t n = wq.shape()[0], m = wp.shape()[0], d = wq.shape()[1];

    auto dist = [d](const double* a, const double* b) {
        if (d == 1) return std::abs(a[0] - b[0]);
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double t = a[k] - b[k];
            acc += t * t;
        }
        return std::sqrt(acc);
    };

    std::vector<std::size_t> num_arg(n), den_arg(n);
    std::vector<double> num_raw(n), den_raw(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* qi = wq.data().data() + i * d;
        double best = std::numeric_limits<double>::infinity();
        std::size_t bj = 0;
        for (std::size_t j = 0; j < m; ++j) {
            const double dd = dist(qi, wp.data().data() + j * d);
            if (dd < best) {
                best = dd;
                bj = j;
            }
        }
        num_raw[i] = best;
        num_arg[i] = bj;

        best = std::numeric_limits<double>::infinity();
        bj = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dd = dist(qi, wq.data().data() + j * d);
            if (dd < best) {
                best = dd;
                bj = j;
            }
        }
        den_raw[i] = best;
        den_arg[i] = bj;

        total += std::log(std::max(num_raw[i], kDistFloor) / std::max(den_raw[i], kDistFloor));
    }
    const double value =
        (double(d) / double(n)) * total + std::log(double(m) / double(n - 1));

    if (!wq.tracked()) {
        if (!std::isfinite(value)) throw NumericError("knn_kl_estimate: non-finite value");
        return Tensor::scalar(value);
    }

    auto fn = [n, m, d, wq, wp, num_arg = std::move(num_arg), den_arg = std::move(den_arg),
               num_raw = std::move(num_raw), den_raw = std::move(den_raw)](
                  const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        (void)m;
        const auto& qdata = wq.data();
        const auto& pdata = wp.data();
        auto& buf = *pg[0];
        const double coef = g[0] * double(d) / double(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (num_raw[i] > kDistFloor) {
                const double inv2 = 1.0 / (num_raw[i] * num_raw[i]);
                const std::size_t j = num_arg[i];
                for (std::size_t k = 0; k < d; ++k) {
                    buf[i * d + k] += coef * (qdata[i * d + k] - pdata[j * d + k]) * inv2;
                }
            }
            if (den_raw[i] > kDistFloor) {
                const double inv2 = 1.0 / (den_raw[i] * den_raw[i]);
                const std::size_t j = den_arg[i];
                for (std::size_t k = 0; k < d; ++k) {
                    const double t = coef * (qdata[i * d + k] - qdata[j * d + k]) * inv2;
                    buf[i * d + k] -= t;
                    buf[j * d + k] += t;
                }
            }
        }
    };
    return wq.tape()->record("knn_kl_estimate", {}, {value}, {wq.node()}, std::move(fn));
}

Tensor knn_kl_percoord_sum(const Tensor& wq, const Tensor& wp) {
    validate_batch(wq, wp);
    const std::size_t n = wq.shape()[0], m = wp.shape()[0], kdim = wq.shape()[1];

    std::vector<std::size_t> num_arg(n * kdim), den_arg(n * kdim);
    std::vector<double> num_raw(n * kdim), den_raw(n * kdim);
    double value = double(kdim) * std::log(double(m) / double(n - 1));
    for (std::size_t k = 0; k < kdim; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double qi = wq.data()[i * kdim + k];
            double best = std::numeric_limits<double>::infinity();
            std::size_t bj = 0;
            for (std::size_t j = 0; j < m; ++j) {
                const double dd = std::abs(qi - wp.data()[j * kdim + k]);
                if (dd < best) {
                    best = dd;
                    bj = j;
                }
            }
            num_raw[i * kdim + k] = best;
            num_arg[i * kdim + k] = bj;

            best = std::numeric_limits<double>::infinity();
            bj = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double dd = std::abs(qi - wq.data()[j * kdim + k]);
                if (dd < best) {
                    best = dd;
                    bj = j;
                }
            }
            den_raw[i * kdim + k] = best;
            den_arg[i * kdim + k] = bj;

            total += std::log(std::max(num_raw[i * kdim + k], kDistFloor) /
                              std::max(den_raw[i * kdim + k], kDistFloor));
        }
        value += total / double(n);
    }

    if (!wq.tracked()) {
        if (!std::isfinite(value)) throw NumericError("knn_kl_percoord_sum: non-finite value");
        return Tensor::scalar(value);
    }

    auto fn = [n, kdim, wq, wp, num_arg = std::move(num_arg), den_arg = std::move(den_arg),
               num_raw = std::move(num_raw), den_raw = std::move(den_raw)](
                  const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        const auto& qdata = wq.data();
        const auto& pdata = wp.data();
        auto& buf = *pg[0];
        const double coef = g[0] / double(n);
        for (std::size_t k = 0; k < kdim; ++k) {
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t at = i * kdim + k;
                if (num_raw[at] > kDistFloor) {
                    const double diff = qdata[at] - pdata[num_arg[at] * kdim + k];
                    buf[at] += coef * (diff > 0.0 ? 1.0 : -1.0) / num_raw[at];
                }
                if (den_raw[at] > kDistFloor) {
                    const std::size_t j = den_arg[at];
                    const double diff = qdata[at] - qdata[j * kdim + k];
                    const double t = coef * (diff > 0.0 ? 1.0 : -1.0) / den_raw[at];
                    buf[at] -= t;
                    buf[j * kdim + k] += t;
                }
            }
        }
    };
    return wq.tape()->record("knn_kl_percoord_sum", {}, {value}, {wq.node()}, std::move(fn));
}

Tensor per_weight_knn_kl(Posterior& posterior, const PriorSpec& prior, std::size_t n,
                         std::size_t m, SampleCtx& ctx) {
    if (n < 2) throw ContractError(msg("per_weight_knn_kl: need n >= 2, got ", n));
    if (m < 1) throw ContractError("per_weight_knn_kl: need m >= 1");
    if (prior.family != PriorSpec::Family::standard_normal) {
        throw ContractError("per_weight_knn_kl: unsupported prior family");
    }

    auto samples = posterior.sample(ctx, n);
    const auto& infos = posterior.network().weight_infos();
    std::vector<Tensor> rows;
    rows.reserve(n);
    for (const WeightSet& ws : samples) {
        std::vector<Tensor> flats;
        flats.reserve(infos.size());
        for (const WeightInfo& info : infos) {
            flats.push_back(reshape(ws.at(info.name), {shape_size(info.shape)}));
        }
        rows.push_back(concat1d(flats));
    }
    Tensor wq = stack_rows(rows);

    Tensor wp = Tensor::zeros({m, wq.shape()[1]});
    for (double& v : wp.data()) v = gauss(ctx.rng());
    return knn_kl_percoord_sum(wq, wp);
}

double gaussian_kl_analytical(double mu1, double sigma1, double mu2, double sigma2) {
    if (sigma1 <= 0.0 || sigma2 <= 0.0) {
        throw ContractError(msg("gaussian_kl_analytical: non-positive sigma (", sigma1, ", ",
                                sigma2, ")"));
    }
    const double dmu = mu1 - mu2;
    return std::log(sigma2 / sigma1) + (sigma1 * sigma1 + dmu * dmu) / (2.0 * sigma2 * sigma2) -
           0.5;
}

double quadrature_kl_oracle(const std::function<double(double)>& log_q,
                            const std::function<double(double)>& log_p, double lo, double hi,
                            std::size_t points) {
    if (points < 2) throw ContractError("quadrature_kl_oracle: need at least 2 points");
    if (!(lo < hi)) throw ContractError("quadrature_kl_oracle: empty interval");
    const double h = (hi - lo) / double(points - 1);
    auto f = [&](double x) {
        const double lq = log_q(x);
        const double q = std::exp(lq);
        if (q == 0.0) return 0.0;
        return q * (lq - log_p(x));
    };
    double acc = 0.5 * (f(lo) + f(hi));
    for (std::size_t i = 1; i + 1 < points; ++i) acc += f(lo + double(i) * h);
    return acc * h;
}

// ---------------------------------------------------------------------------
// Discriminator estimator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(const std::vector<std::size_t>& hidden, Rng& rng) {
    dims_.push_back(1);
    for (std::size_t h : hidden) {
        if (h == 0) throw ContractError("discriminator hidden extent must be positive");
        dims_.push_back(h);
    }
    dims_.push_back(1);
    for (std::size_t j = 0; j + 1 < dims_.size(); ++j) {
        const std::size_t fan_in = dims_[j], fan_out = dims_[j + 1];
        const bool last = (j + 2 == dims_.size());
        Tensor w = Tensor::zeros({fan_in, fan_out});
        const double wstd = last ? 1.0 / std::sqrt(double(fan_in)) : std::sqrt(2.0 / double(fan_in));
        for (double& v : w.data()) v = wstd * gauss(rng);
        const std::string wname = msg("d.w", j);
        const std::string bname = msg("d.b", j);
        index_.emplace(wname, params_.size());
        params_.push_back({wname, std::move(w)});
        index_.emplace(bname, params_.size());
        params_.push_back({bname, Tensor::zeros({fan_out})});
    }
}

Tensor Discriminator::logits(SampleCtx& ctx, const Tensor& x) const {
    if (x.rank() != 2 || x.shape()[1] != 1) {
        throw DimensionError(msg("discriminator input must be {B, 1}, got ",
                                 shape_str(x.shape())));
    }
    Tensor h = x;
    for (std::size_t j = 0; j + 1 < dims_.size(); ++j) {
        const NamedTensor& w = params_[index_.at(msg("d.w", j))];
        const NamedTensor& b = params_[index_.at(msg("d.b", j))];
        h = add(matmul(h, ctx.param(w.name, w.value)), ctx.param(b.name, b.value));
        if (j + 2 < dims_.size()) h = relu(h);
    }
    return h;
}

double Discriminator::train_step(const std::vector<double>& q_values,
                                 const std::vector<double>& p_values, AdamState& opt,
                                 double lr) {
    if (q_values.empty() || p_values.empty()) {
        throw ContractError("discriminator train step needs samples from both classes");
    }
    std::vector<double> x(q_values);
    x.insert(x.end(), p_values.begin(), p_values.end());
    std::vector<double> y(q_values.size(), 1.0);
    y.resize(x.size(), 0.0);
    const std::size_t b = x.size();

    Tape tape;
    SampleCtx ctx(tape);
    Tensor logit = logits(ctx, Tensor({b, 1}, std::move(x)));
    Tensor loss = binary_cross_entropy_with_logits(reshape(logit, {b}), y);
    Gradients grads = tape.backward(loss);
    std::map<std::string, Tensor> by_name;
    for (const auto& [name, leaf] : ctx.leaves()) by_name.emplace(name, grads.at(leaf));
    adam_step(opt, params_, by_name, lr);
    return loss.item();
}

DiscriminatorKlResult discriminator_kl_estimate(const ScalarSampler& q_sampler,
                                                const ScalarSampler& p_sampler,
                                                const DiscriminatorSchedule& schedule,
                                                Rng& rng) {
    Discriminator d(schedule.hidden, rng);
    AdamState opt;
    const std::size_t total = schedule.pretrain_steps + schedule.train_steps;
    for (std::size_t step = 0; step < total; ++step) {
        d.train_step(q_sampler(schedule.batch, rng), p_sampler(schedule.batch, rng), opt,
                     schedule.lr);
    }

    std::vector<double> qs = q_sampler(4096, rng);
    SampleCtx ctx;
    const std::size_t b = qs.size();
    Tensor logit = d.logits(ctx, Tensor({b, 1}, std::move(qs)));
    double est = 0.0;
    for (double v : logit.data()) est += v;
    est /= double(b);
    return DiscriminatorKlResult{est, std::move(d)};
}

}  // namespace bbh

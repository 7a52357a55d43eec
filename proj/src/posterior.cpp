#include "bbh/posterior.hpp"

#include <algorithm>
#include <cmath>

namespace bbh {

Tensor SampleCtx::param(const std::string& name, const Tensor& value) {
    if (!tape_) return value;
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    Tensor leaf = tape_->leaf(value);
    leaves_.emplace(name, leaf);
    return leaf;
}

NamedTensor& Posterior::param(const std::string& name) {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) {
        throw ContractError(msg("posterior has no parameter '", name, "'"));
    }
    return params_[it->second];
}

void Posterior::add_param(std::string name, Tensor value) {
    if (param_index_.count(name)) {
        throw ContractError(msg("duplicate posterior parameter '", name, "'"));
    }
    param_index_.emplace(name, params_.size());
    params_.push_back(NamedTensor{std::move(name), std::move(value)});
}

WeightSet init_point_weights(const NetworkSpec& spec, Rng& rng) {
    WeightSet ws;
    for (const ParamLayer& pl : spec.param_layers()) {
        Tensor kernel = Tensor::zeros(pl.kernel_shape);
        const double std = 1.0 / std::sqrt(double(pl.fan_in));
        for (double& v : kernel.data()) v = std * gauss(rng);
        ws[pl.kernel] = std::move(kernel);
        ws[pl.bias] = Tensor::zeros(pl.bias_shape);
    }
    return ws;
}

// ---------------------------------------------------------------------------
// Hypernet posterior
// ---------------------------------------------------------------------------

std::vector<std::vector<double>> make_noise(const HypernetConfig& config, std::size_t calls,
                                            Rng& rng) {
    std::vector<std::vector<double>> z(calls);
    if (config.noise_mode == HypernetConfig::NoiseMode::shared) {
        std::vector<double> one(config.noise_dim);
        for (double& v : one) v = gauss(rng);
        for (auto& zi : z) zi = one;
    } else {
        for (auto& zi : z) {
            zi.resize(config.noise_dim);
            for (double& v : zi) v = gauss(rng);
        }
    }
    return z;
}

HypernetPosterior::HypernetPosterior(HypernetConfig config, NetworkSpec spec, Rng& rng)
    : Posterior(std::move(spec)), config_(std::move(config)) {
    if (config_.noise_dim == 0) throw ContractError("hypernet noise dimension must be positive");
    const auto& pls = spec_.param_layers();
    if (pls.empty()) throw ContractError("hypernet posterior over a network with no weights");

    auto build = [&](std::size_t in_dim, std::size_t out_dim, std::size_t cond_len,
                     double out_bias_std) {
        Generator gen;
        gen.cond_len = cond_len;
        gen.dims.push_back(in_dim);
        for (std::size_t h : config_.hidden) gen.dims.push_back(h);
        gen.dims.push_back(out_dim);
        const std::size_t g = generators_.size();
        for (std::size_t j = 0; j + 1 < gen.dims.size(); ++j) {
            const std::size_t fan_in = gen.dims[j], fan_out = gen.dims[j + 1];
            const bool last = (j + 2 == gen.dims.size());
            Tensor w = Tensor::zeros({fan_in, fan_out});
            const double wstd = last ? 0.01 : std::sqrt(2.0 / double(fan_in));
            for (double& v : w.data()) v = wstd * gauss(rng);
            Tensor b = Tensor::zeros({fan_out});
            if (last) {
                for (double& v : b.data()) v = out_bias_std * gauss(rng);
            }
            add_param(msg("g", g, ".w", j), std::move(w));
            add_param(msg("g", g, ".b", j), std::move(b));
        }
        generators_.push_back(std::move(gen));
    };

    switch (config_.arch) {
        case HypernetConfig::Arch::layer_wise:
            for (const ParamLayer& pl : pls) {
                build(config_.noise_dim, pl.flat_size, 0, 1.0 / std::sqrt(double(pl.fan_in)));
            }
            break;
        case HypernetConfig::Arch::sliced_layer_wise:
            for (const ParamLayer& pl : pls) {
                build(config_.noise_dim + pl.out_units, pl.slice_size, pl.out_units,
                      1.0 / std::sqrt(double(pl.fan_in)));
            }
            break;
        case HypernetConfig::Arch::single: {
            std::size_t total_slices = 0, max_slice = 0, max_fan_in = 1;
            for (const ParamLayer& pl : pls) {
                total_slices += pl.out_units;
                max_slice = std::max(max_slice, pl.slice_size);
                max_fan_in = std::max(max_fan_in, pl.fan_in);
            }
            build(config_.noise_dim + total_slices, max_slice, total_slices,
                  1.0 / std::sqrt(double(max_fan_in)));
            break;
        }
    }
}

std::size_t HypernetPosterior::conditioning_length(std::size_t gen) const {
    if (gen >= generators_.size()) {
        throw ContractError(msg("generator index ", gen, " out of range"));
    }
    return generators_[gen].cond_len;
}

std::size_t HypernetPosterior::noise_calls_per_sample() const {
    if (config_.arch == HypernetConfig::Arch::layer_wise) {
        return spec_.param_layers().size();
    }
    std::size_t calls = 0;
    for (const ParamLayer& pl : spec_.param_layers()) calls += pl.out_units;
    return calls;
}

Tensor HypernetPosterior::forward(SampleCtx& ctx, std::size_t gen, const Tensor& input) const {
    const Generator& g = generators_[gen];
    Tensor h = input;
    for (std::size_t j = 0; j + 1 < g.dims.size(); ++j) {
        const NamedTensor& w = params_[param_index_.at(msg("g", gen, ".w", j))];
        const NamedTensor& b = params_[param_index_.at(msg("g", gen, ".b", j))];
        h = add(matmul(h, ctx.param(w.name, w.value)), ctx.param(b.name, b.value));
        if (j + 2 < g.dims.size()) h = relu(h);
    }
    return h;
}

Tensor HypernetPosterior::generate(SampleCtx& ctx, std::size_t gen, const std::vector<double>& z,
                                   const std::vector<double>& conditioning) {
    if (gen >= generators_.size()) {
        throw ContractError(msg("generator index ", gen, " out of range"));
    }
    const Generator& g = generators_[gen];
    if (z.size() != config_.noise_dim) {
        throw ContractError(msg("noise vector has length ", z.size(), ", configured d=",
                                config_.noise_dim));
    }
    if (conditioning.size() != g.cond_len) {
        throw ContractError(msg("conditioning vector has length ", conditioning.size(),
                                ", generator demands ", g.cond_len));
    }
    std::size_t hot = g.cond_len;  // index of the 1 entry, if any
    if (g.cond_len > 0) {
        std::size_t ones = 0;
        for (std::size_t i = 0; i < conditioning.size(); ++i) {
            if (conditioning[i] == 1.0) {
                hot = i;
                ++ones;
            } else if (conditioning[i] != 0.0) {
                throw ContractError("conditioning vector must be one-hot");
            }
        }
        if (ones != 1) throw ContractError("conditioning vector must be one-hot");
    }

    std::vector<double> input(z);
    input.insert(input.end(), conditioning.begin(), conditioning.end());
    const std::size_t in_len = input.size();
    Tensor out = forward(ctx, gen, Tensor({1, in_len}, std::move(input)));
    Tensor flat = reshape(out, {out.size()});

    if (config_.arch == HypernetConfig::Arch::single) {
        // prefix of the shared output head sized to the addressed slice
        std::size_t offset = 0;
        for (const ParamLayer& pl : spec_.param_layers()) {
            if (hot < offset + pl.out_units) return slice1d(flat, 0, pl.slice_size);
            offset += pl.out_units;
        }
        throw ContractError("conditioning index beyond the network's slices");
    }
    return flat;
}

Tensor hypernet_generate(HypernetPosterior& posterior, SampleCtx& ctx, std::size_t gen,
                         const std::vector<double>& z,
                         const std::vector<double>& conditioning) {
    return posterior.generate(ctx, gen, z, conditioning);
}

namespace {

// Slices laid out one per row; kernel entry (pos, c) comes from row (row0+c)
// position pos, the bias element from position fan_in.
std::pair<Tensor, Tensor> assemble_from_slices(const Tensor& rows_flat, std::size_t row0,
                                               std::size_t row_stride, const ParamLayer& pl) {
    const std::size_t c_out = pl.out_units, fan_in = pl.fan_in;
    std::vector<std::size_t> kidx(fan_in * c_out);
    for (std::size_t pos = 0; pos < fan_in; ++pos) {
        for (std::size_t c = 0; c < c_out; ++c) {
            kidx[pos * c_out + c] = (row0 + c) * row_stride + pos;
        }
    }
    std::vector<std::size_t> bidx(c_out);
    for (std::size_t c = 0; c < c_out; ++c) bidx[c] = (row0 + c) * row_stride + fan_in;
    return {reshape(gather1d(rows_flat, kidx), pl.kernel_shape), gather1d(rows_flat, bidx)};
}

}  // namespace

WeightSet HypernetPosterior::sample_one(SampleCtx& ctx) {
    const auto& pls = spec_.param_layers();
    const std::size_t d = config_.noise_dim;
    WeightSet ws;

    if (config_.arch == HypernetConfig::Arch::layer_wise) {
        auto z = make_noise(config_, pls.size(), ctx.rng());
        for (std::size_t l = 0; l < pls.size(); ++l) {
            Tensor out = forward(ctx, l, Tensor({1, d}, z[l]));
            Tensor flat = reshape(out, {pls[l].flat_size});
            const std::size_t ksize = shape_size(pls[l].kernel_shape);
            ws[pls[l].kernel] = reshape(slice1d(flat, 0, ksize), pls[l].kernel_shape);
            ws[pls[l].bias] = slice1d(flat, ksize, pls[l].out_units);
        }
        return ws;
    }

    if (config_.arch == HypernetConfig::Arch::sliced_layer_wise) {
        auto z = make_noise(config_, noise_calls_per_sample(), ctx.rng());
        std::size_t call = 0;
        for (std::size_t l = 0; l < pls.size(); ++l) {
            const std::size_t c_out = pls[l].out_units;
            std::vector<double> input((d + c_out) * c_out, 0.0);
            for (std::size_t c = 0; c < c_out; ++c) {
                std::copy(z[call].begin(), z[call].end(), input.begin() + c * (d + c_out));
                input[c * (d + c_out) + d + c] = 1.0;
                ++call;
            }
            Tensor out = forward(ctx, l, Tensor({c_out, d + c_out}, std::move(input)));
            Tensor flat = reshape(out, {c_out * pls[l].slice_size});
            auto [kernel, bias] = assemble_from_slices(flat, 0, pls[l].slice_size, pls[l]);
            ws[pls[l].kernel] = std::move(kernel);
            ws[pls[l].bias] = std::move(bias);
        }
        return ws;
    }

    // single generator over every slice of the network
    const std::size_t total = noise_calls_per_sample();
    auto z = make_noise(config_, total, ctx.rng());
    std::vector<double> input((d + total) * total, 0.0);
    for (std::size_t r = 0; r < total; ++r) {
        std::copy(z[r].begin(), z[r].end(), input.begin() + r * (d + total));
        input[r * (d + total) + d + r] = 1.0;
    }
    Tensor out = forward(ctx, 0, Tensor({total, d + total}, std::move(input)));
    const std::size_t max_slice = generators_[0].dims.back();
    Tensor flat = reshape(out, {total * max_slice});
    std::size_t row0 = 0;
    for (const ParamLayer& pl : pls) {
        auto [kernel, bias] = assemble_from_slices(flat, row0, max_slice, pl);
        ws[pl.kernel] = std::move(kernel);
        ws[pl.bias] = std::move(bias);
        row0 += pl.out_units;
    }
    return ws;
}

std::vector<WeightSet> HypernetPosterior::sample(SampleCtx& ctx, std::size_t count) {
    std::vector<WeightSet> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) out.push_back(sample_one(ctx));
    return out;
}

// ---------------------------------------------------------------------------
// Factorized Gaussian
// ---------------------------------------------------------------------------

double reparam_sample(double mu, double rho, double eps) {
    return mu + softplus_value(rho) * eps;
}

FactorizedGaussianPosterior::FactorizedGaussianPosterior(NetworkSpec spec, Rng& rng,
                                                         double init_sigma)
    : Posterior(std::move(spec)) {
    if (init_sigma <= 0.0) throw ContractError("initial sigma must be positive");
    const double rho0 = std::log(std::expm1(init_sigma));
    WeightSet point = init_point_weights(spec_, rng);
    for (const WeightInfo& info : spec_.weight_infos()) {
        add_param("mu." + info.name, point.at(info.name));
        add_param("rho." + info.name, Tensor::full(info.shape, rho0));
    }
}

std::vector<WeightSet> FactorizedGaussianPosterior::sample(SampleCtx& ctx, std::size_t count) {
    std::vector<WeightSet> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        WeightSet ws;
        for (const WeightInfo& info : spec_.weight_infos()) {
            NamedTensor& m = param("mu." + info.name);
            NamedTensor& r = param("rho." + info.name);
            Tensor eps = Tensor::zeros(info.shape);
            for (double& v : eps.data()) v = gauss(ctx.rng());
            ws[info.name] = add(ctx.param(m.name, m.value),
                                mul(softplus(ctx.param(r.name, r.value)), eps));
        }
        out.push_back(std::move(ws));
    }
    return out;
}

Tensor FactorizedGaussianPosterior::analytical_kl(SampleCtx& ctx) {
    Tensor kl = Tensor::scalar(0.0);
    for (const WeightInfo& info : spec_.weight_infos()) {
        NamedTensor& m = param("mu." + info.name);
        NamedTensor& r = param("rho." + info.name);
        Tensor mu_t = ctx.param(m.name, m.value);
        Tensor sigma = softplus(ctx.param(r.name, r.value));
        // -log(sigma) + (sigma^2 + mu^2)/2 - 1/2 per weight
        Tensor term = add_scalar(
            add(neg(log(sigma)), scale(add(mul(sigma, sigma), mul(mu_t, mu_t)), 0.5)), -0.5);
        kl = add(kl, sum(term));
    }
    return kl;
}

const Tensor& FactorizedGaussianPosterior::mu(const std::string& weight_name) const {
    return params_[param_index_.at("mu." + weight_name)].value;
}

const Tensor& FactorizedGaussianPosterior::rho(const std::string& weight_name) const {
    return params_[param_index_.at("rho." + weight_name)].value;
}

double FactorizedGaussianPosterior::sigma_at(const std::string& weight_name,
                                             std::size_t i) const {
    return softplus_value(rho(weight_name).data()[i]);
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

DropoutPosterior::DropoutPosterior(NetworkSpec spec, double rate, Rng& rng)
    : Posterior(std::move(spec)), rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ContractError(msg("dropout rate must lie in [0, 1), got ", rate));
    }
    WeightSet point = init_point_weights(spec_, rng);
    for (const WeightInfo& info : spec_.weight_infos()) {
        add_param("w." + info.name, point.at(info.name));
    }
}

WeightSet DropoutPosterior::point_weights(SampleCtx& ctx) {
    WeightSet ws;
    for (const WeightInfo& info : spec_.weight_infos()) {
        NamedTensor& p = param("w." + info.name);
        ws[info.name] = ctx.param(p.name, p.value);
    }
    return ws;
}

std::vector<WeightSet> DropoutPosterior::sample(SampleCtx& ctx, std::size_t count) {
    const double keep_scale = 1.0 / (1.0 - rate_);
    std::vector<WeightSet> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        WeightSet ws;
        for (const ParamLayer& pl : spec_.param_layers()) {
            NamedTensor& k = param("w." + pl.kernel);
            NamedTensor& b = param("w." + pl.bias);
            Tensor kernel = ctx.param(k.name, k.value);
            Tensor bias = ctx.param(b.name, b.value);
            if (pl.kernel_shape.size() == 2) {
                // input-unit dropout: zero whole kernel rows, biases untouched
                const std::size_t in = pl.kernel_shape[0], out_u = pl.kernel_shape[1];
                Tensor mask = Tensor::zeros(pl.kernel_shape);
                for (std::size_t i = 0; i < in; ++i) {
                    const double factor = uniform(ctx.rng(), 0.0, 1.0) < rate_ ? 0.0 : keep_scale;
                    for (std::size_t j = 0; j < out_u; ++j) mask.data()[i * out_u + j] = factor;
                }
                ws[pl.kernel] = mul(kernel, mask);
                ws[pl.bias] = bias;
            } else {
                // channel dropout on conv outputs: kernel slice plus bias entry
                const std::size_t c_out = pl.out_units;
                std::vector<double> factor(c_out);
                for (double& f : factor) f = uniform(ctx.rng(), 0.0, 1.0) < rate_ ? 0.0 : keep_scale;
                Tensor kmask = Tensor::zeros(pl.kernel_shape);
                for (std::size_t i = 0; i < kmask.size(); ++i) {
                    kmask.data()[i] = factor[i % c_out];
                }
                ws[pl.kernel] = mul(kernel, kmask);
                ws[pl.bias] = mul(bias, Tensor({c_out}, factor));
            }
        }
        out.push_back(std::move(ws));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Point and ensemble
// ---------------------------------------------------------------------------

PointPosterior::PointPosterior(NetworkSpec spec, Rng& rng) : Posterior(std::move(spec)) {
    WeightSet point = init_point_weights(spec_, rng);
    for (const WeightInfo& info : spec_.weight_infos()) {
        add_param("w." + info.name, point.at(info.name));
    }
}

WeightSet PointPosterior::point_weights(SampleCtx& ctx) {
    WeightSet ws;
    for (const WeightInfo& info : spec_.weight_infos()) {
        NamedTensor& p = param("w." + info.name);
        ws[info.name] = ctx.param(p.name, p.value);
    }
    return ws;
}

std::vector<WeightSet> PointPosterior::sample(SampleCtx& ctx, std::size_t count) {
    WeightSet ws = point_weights(ctx);
    return std::vector<WeightSet>(count, ws);
}

EnsemblePosterior::EnsemblePosterior(NetworkSpec spec, std::vector<WeightSet> members)
    : Posterior(std::move(spec)), members_(members.size()) {
    if (members.empty()) throw ContractError("ensemble needs at least one member");
    for (std::size_t i = 0; i < members.size(); ++i) {
        validate_weights(spec_, members[i]);
        for (const WeightInfo& info : spec_.weight_infos()) {
            add_param(msg("m", i, ".w.", info.name), members[i].at(info.name));
        }
    }
}

std::vector<WeightSet> EnsemblePosterior::sample(SampleCtx& ctx, std::size_t count) {
    std::vector<WeightSet> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        WeightSet ws;
        for (const WeightInfo& info : spec_.weight_infos()) {
            NamedTensor& p = param(msg("m", s % members_, ".w.", info.name));
            ws[info.name] = ctx.param(p.name, p.value);
        }
        out.push_back(std::move(ws));
    }
    return out;
}

}  // namespace bbh

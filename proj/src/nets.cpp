#include "bbh/nets.hpp"

#include <set>

namespace bbh {

namespace {

std::size_t flat(const Shape& s) { return shape_size(s); }

}  // namespace

NetworkSpec::NetworkSpec(std::vector<Layer> layers) : layers_(std::move(layers)) {
    std::set<std::string> seen;
    auto claim = [&](const std::string& name) {
        if (name.empty()) throw ContractError("network layer weight name is empty");
        if (!seen.insert(name).second) {
            throw ContractError(msg("duplicate weight name '", name, "' in network spec"));
        }
    };
    for (const Layer& layer : layers_) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            if (d->in == 0 || d->out == 0) {
                throw ContractError(msg("dense layer '", d->kernel, "' has zero extent"));
            }
            claim(d->kernel);
            claim(d->bias);
            infos_.push_back({d->kernel, {d->in, d->out}});
            infos_.push_back({d->bias, {d->out}});
            ParamLayer pl;
            pl.kernel = d->kernel;
            pl.bias = d->bias;
            pl.kernel_shape = {d->in, d->out};
            pl.bias_shape = {d->out};
            pl.fan_in = d->in;
            pl.out_units = d->out;
            pl.flat_size = d->in * d->out + d->out;
            pl.slice_size = d->in + 1;
            param_layers_.push_back(std::move(pl));
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            if (c->kh == 0 || c->kw == 0 || c->cin == 0 || c->cout == 0) {
                throw ContractError(msg("conv layer '", c->kernel, "' has zero extent"));
            }
            claim(c->kernel);
            claim(c->bias);
            infos_.push_back({c->kernel, {c->kh, c->kw, c->cin, c->cout}});
            infos_.push_back({c->bias, {c->cout}});
            ParamLayer pl;
            pl.kernel = c->kernel;
            pl.bias = c->bias;
            pl.kernel_shape = {c->kh, c->kw, c->cin, c->cout};
            pl.bias_shape = {c->cout};
            pl.fan_in = c->kh * c->kw * c->cin;
            pl.out_units = c->cout;
            pl.flat_size = flat(pl.kernel_shape) + c->cout;
            pl.slice_size = pl.fan_in + 1;
            param_layers_.push_back(std::move(pl));
        }
    }
}

std::size_t NetworkSpec::param_count() const {
    std::size_t n = 0;
    for (const WeightInfo& w : infos_) n += flat(w.shape);
    return n;
}

NetworkSpec build_mlp(const std::vector<std::size_t>& layer_extents) {
    if (layer_extents.size() < 2) {
        throw ContractError(msg("build_mlp: need at least 2 extents, got ",
                                layer_extents.size()));
    }
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < layer_extents.size(); ++i) {
        DenseLayer d;
        d.in = layer_extents[i];
        d.out = layer_extents[i + 1];
        d.kernel = msg("dense", i, ".kernel");
        d.bias = msg("dense", i, ".bias");
        layers.emplace_back(std::move(d));
        if (i + 2 < layer_extents.size()) layers.emplace_back(ReluLayer{});
    }
    return NetworkSpec(std::move(layers));
}

NetworkSpec build_lenet(std::size_t num_classes) {
    if (num_classes < 2) {
        throw ContractError(msg("build_lenet: need at least 2 classes, got ", num_classes));
    }
    std::vector<Layer> layers;
    layers.emplace_back(Conv2dLayer{5, 5, 1, 20, 1, Padding::valid, "conv0.kernel", "conv0.bias"});
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(MaxPool2Layer{});
    layers.emplace_back(Conv2dLayer{5, 5, 20, 50, 1, Padding::valid, "conv1.kernel", "conv1.bias"});
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(MaxPool2Layer{});
    layers.emplace_back(FlattenLayer{});
    layers.emplace_back(DenseLayer{800, 500, "dense0.kernel", "dense0.bias"});
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(DenseLayer{500, num_classes, "dense1.kernel", "dense1.bias"});
    return NetworkSpec(std::move(layers));
}

void validate_weights(const NetworkSpec& spec, const WeightSet& weights) {
    const auto& infos = spec.weight_infos();
    if (weights.size() != infos.size()) {
        throw ContractError(msg("weight set has ", weights.size(), " tensors, spec demands ",
                                infos.size()));
    }
    for (const WeightInfo& info : infos) {
        auto it = weights.find(info.name);
        if (it == weights.end()) {
            throw ContractError(msg("weight set is missing '", info.name, "'"));
        }
        if (it->second.shape() != info.shape) {
            throw DimensionError(msg("weight '", info.name, "' has shape ",
                                     shape_str(it->second.shape()), ", spec demands ",
                                     shape_str(info.shape)));
        }
    }
}

namespace {

Tensor flatten_rows(const Tensor& x) {
    std::size_t rows = x.shape()[0];
    return reshape(x, {rows, x.size() / rows});
}

const Tensor& weight_of(const WeightSet& weights, const std::string& name) {
    auto it = weights.find(name);
    if (it == weights.end()) {
        throw ContractError(msg("weight set is missing '", name, "'"));
    }
    return it->second;
}

}  // namespace

Tensor apply_network(const NetworkSpec& spec, const WeightSet& weights, const Tensor& input) {
    if (input.rank() < 2) {
        throw DimensionError(msg("apply_network: input must carry a batch dimension, got ",
                                 shape_str(input.shape())));
    }
    Tensor x = input;
    for (const Layer& layer : spec.layers()) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            if (x.rank() > 2) x = flatten_rows(x);
            if (x.shape()[1] != d->in) {
                throw DimensionError(msg("apply_network: dense layer '", d->kernel,
                                         "' expects ", d->in, " inputs, got ",
                                         shape_str(x.shape())));
            }
            const Tensor& w = weight_of(weights, d->kernel);
            if (w.shape() != Shape{d->in, d->out}) {
                throw DimensionError(msg("weight '", d->kernel, "' has shape ",
                                         shape_str(w.shape()), ", layer demands ",
                                         shape_str({d->in, d->out})));
            }
            x = add(matmul(x, w), weight_of(weights, d->bias));
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            const Tensor& w = weight_of(weights, c->kernel);
            if (w.shape() != Shape{c->kh, c->kw, c->cin, c->cout}) {
                throw DimensionError(msg("weight '", c->kernel, "' has shape ",
                                         shape_str(w.shape()), ", layer demands ",
                                         shape_str({c->kh, c->kw, c->cin, c->cout})));
            }
            x = add(conv2d(x, w, c->stride, c->padding), weight_of(weights, c->bias));
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            x = relu(x);
        } else if (std::holds_alternative<MaxPool2Layer>(layer)) {
            x = maxpool2(x);
        } else {
            x = flatten_rows(x);
        }
    }
    return x;
}

}  // namespace bbh

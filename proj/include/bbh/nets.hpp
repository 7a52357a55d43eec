#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "bbh/autograd.hpp"

namespace bbh {

struct DenseLayer {
    std::size_t in = 0, out = 0;
    std::string kernel, bias;
};

struct Conv2dLayer {
    std::size_t kh = 0, kw = 0, cin = 0, cout = 0, stride = 1;
    Padding padding = Padding::valid;
    std::string kernel, bias;
};

struct ReluLayer {};
struct MaxPool2Layer {};
struct FlattenLayer {};

using Layer = std::variant<DenseLayer, Conv2dLayer, ReluLayer, MaxPool2Layer, FlattenLayer>;

struct WeightInfo {
    std::string name;
    Shape shape;
};

/// One parameterized layer as seen by posteriors: its kernel/bias pair, the
/// fan-in used for init scaling, and its output-unit count (slice axis).
struct ParamLayer {
    std::string kernel, bias;
    Shape kernel_shape, bias_shape;
    std::size_t fan_in = 0;
    std::size_t out_units = 0;
    std::size_t flat_size = 0;   // kernel + bias elements
    std::size_t slice_size = 0;  // per-output-unit weights + bias element
};

/// Named collection of weight tensors instantiating a NetworkSpec.
using WeightSet = std::map<std::string, Tensor>;

class NetworkSpec {
public:
    NetworkSpec() = default;
    explicit NetworkSpec(std::vector<Layer> layers);

    const std::vector<Layer>& layers() const { return layers_; }

    /// Kernel/bias descriptors in layer order; the canonical coordinate order
    /// for flattened weight vectors, checkpoints and per-weight estimators.
    const std::vector<WeightInfo>& weight_infos() const { return infos_; }
    const std::vector<ParamLayer>& param_layers() const { return param_layers_; }

    std::size_t param_count() const;

private:
    std::vector<Layer> layers_;
    std::vector<WeightInfo> infos_;
    std::vector<ParamLayer> param_layers_;
};

/// Dense layers with ReLU between hidden layers and a linear output.
NetworkSpec build_mlp(const std::vector<std::size_t>& layer_extents);

/// Caffe-style LeNet: conv5x5/20, pool, conv5x5/50, pool, dense 500, dense C.
NetworkSpec build_lenet(std::size_t num_classes);

/// Exact-name and exact-shape validation of a WeightSet against a spec.
void validate_weights(const NetworkSpec& spec, const WeightSet& weights);

/// Deterministic forward pass, differentiable w.r.t. weights and input.
/// Rank>2 input to a dense layer is flattened row-wise when extents agree.
Tensor apply_network(const NetworkSpec& spec, const WeightSet& weights, const Tensor& input);

}  // namespace bbh

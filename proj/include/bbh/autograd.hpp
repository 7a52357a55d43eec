#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bbh/common.hpp"

namespace bbh {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Dense row-major tensor of 64-bit reals. A tensor is either a plain value
/// or tracked on a Tape (tape + node handle), in which case operations on it
/// record gradient closures for reverse-mode differentiation.
///
/// Buffers are shared between copies and cloned on mutable access, so
/// gradient closures can hold their inputs without deep copies.
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<double>>()) {}
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);

    const Shape& shape() const { return shape_; }
    const std::vector<double>& data() const { return *data_; }
    std::vector<double>& data() {
        if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
        return *data_;
    }
    std::size_t size() const { return data_->size(); }
    std::size_t rank() const { return shape_.size(); }

    /// Value of a single-element tensor.
    double item() const;

    bool tracked() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

private:
    friend class Tape;
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

/// Result of one backward pass: gradient of the loss w.r.t. every node.
/// Leaves never reached by the loss report zero gradients.
class Gradients {
public:
    Tensor at(const Tensor& leaf) const;
    bool reached(const Tensor& leaf) const;

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::unique_ptr<std::vector<double>>> grads_;
};

/// Record of primitive operations in topological order. Each node stores the
/// handles of its parents plus a closure that scatters the node's output
/// gradient into per-parent accumulation buffers (additive at shared nodes).
class Tape {
public:
    using Backward = std::function<void(const std::vector<double>& grad_out,
                                        const std::vector<std::vector<double>*>& parent_grads)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Tracks `value` on this tape as a leaf (buffer shared, not copied).
    Tensor leaf(const Tensor& value);
    Tensor leaf(Shape shape, std::vector<double> data);

    /// Records one primitive. `parents` are node handles of tracked inputs;
    /// `backward` receives dL/d(output) and accumulates into parent buffers
    /// in the same order. Used by every built-in op and open to custom ops.
    Tensor record(const char* op, Shape shape, std::vector<double> data,
                  std::vector<int> parents, Backward backward);
    Tensor record(const char* op, Tensor value, std::vector<int> parents, Backward backward);

    /// Reverse pass from a scalar loss. One backward per tape.
    Gradients backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<int> parents;
        Backward fn;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

Gradients backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitive operations. Broadcasting is minimal by design: elementwise ops
// accept equal shapes, a single-element operand, or (for add/sub) a rank-1
// operand matching the last extent (bias rows).
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor matmul(const Tensor& a, const Tensor& b);

enum class Padding { valid, same };

/// Cross-correlation of NHWC input with [kh, kw, Cin, Cout] kernel.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, Padding padding);

/// 2x2 max pooling with stride 2; gradient routes to the argmax element,
/// ties broken by first index in scan order.
Tensor maxpool2(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice1d(const Tensor& x, std::size_t begin, std::size_t len);
Tensor concat1d(std::span<const Tensor> parts);
Tensor stack_rows(std::span<const Tensor> rows);
Tensor gather1d(const Tensor& x, const std::vector<std::size_t>& idx);

/// Mean over rows of -log softmax(logits)[label], with max-subtraction
/// stabilization. Per-row gradient is softmax - onehot.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Mean of the numerically stable elementwise binary cross-entropy between
/// sigmoid(logits) and targets in {0, 1}.
Tensor binary_cross_entropy_with_logits(const Tensor& logits, const std::vector<double>& targets);

/// Forward-only row softmax of a [N, C] tensor.
std::vector<double> softmax_rows(const Tensor& logits);

double softplus_value(double x);
double sigmoid_value(double x);

/// Max over coordinates of |analytic - central difference| /
/// max(1e-8, |analytic| + |numeric|) for a scalar-valued tensor function.
double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double h = 1e-5);

}  // namespace bbh

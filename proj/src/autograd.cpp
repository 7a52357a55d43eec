#include "bbh/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

namespace bbh {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void ensure_finite(const char* op, const std::vector<double>& data) {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw NumericError(msg(op, ": non-finite value produced"));
        }
    }
}

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->tracked()) continue;
        if (tape == nullptr) {
            tape = t->tape();
        } else if (tape != t->tape()) {
            throw ContractError("operands are tracked on different tapes");
        }
    }
    return tape;
}

Tensor plain(const char* op, Shape shape, std::vector<double> data) {
    ensure_finite(op, data);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(data))) {
    if (shape_size(shape_) != data_->size()) {
        throw DimensionError(msg("tensor shape ", shape_str(shape_), " does not match data length ",
                                 data_->size()));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(Shape shape) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError(msg("item() on non-scalar tensor of shape ", shape_str(shape_)));
    }
    return data_[0];
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
    Tensor copy = value;  // shares the buffer
    copy.tape_ = nullptr;
    copy.node_ = -1;
    return record("leaf", std::move(copy), {}, nullptr);
}

Tensor Tape::leaf(Shape shape, std::vector<double> data) {
    return record("leaf", std::move(shape), std::move(data), {}, nullptr);
}

Tensor Tape::record(const char* op, Shape shape, std::vector<double> data,
                    std::vector<int> parents, Backward backward) {
    return record(op, Tensor(std::move(shape), std::move(data)), std::move(parents),
                  std::move(backward));
}

Tensor Tape::record(const char* op, Tensor value, std::vector<int> parents, Backward backward) {
    if (consumed_) {
        throw ContractError("tape already consumed by a backward pass");
    }
    for (int p : parents) {
        if (p < 0 || p >= static_cast<int>(nodes_.size())) {
            throw ContractError(msg(op, ": invalid parent handle ", p));
        }
    }
    ensure_finite(op, value.data());
    value.tape_ = this;
    value.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{value.shape(), std::move(parents), std::move(backward)});
    return value;
}

Gradients Tape::backward(const Tensor& loss) {
    if (consumed_) {
        throw ContractError("tape already consumed by a backward pass");
    }
    if (!loss.tracked() || loss.tape() != this) {
        throw ContractError("backward: loss is not tracked on this tape");
    }
    if (loss.size() != 1) {
        throw ContractError(msg("backward: loss must be scalar, got shape ",
                                shape_str(loss.shape())));
    }
    consumed_ = true;

    Gradients out;
    out.tape_ = this;
    out.grads_.resize(nodes_.size());
    out.grads_[loss.node()] = std::make_unique<std::vector<double>>(1, 1.0);

    for (int id = loss.node(); id >= 0; --id) {
        const auto& gslot = out.grads_[id];
        if (!gslot) continue;
        const Node& node = nodes_[id];
        if (!node.fn) continue;  // leaf
        std::vector<std::vector<double>*> pbufs;
        pbufs.reserve(node.parents.size());
        for (int p : node.parents) {
            auto& slot = out.grads_[p];
            if (!slot) {
                slot = std::make_unique<std::vector<double>>(shape_size(nodes_[p].shape), 0.0);
            }
            pbufs.push_back(slot.get());
        }
        node.fn(*gslot, pbufs);
    }
    return out;
}

Tensor Gradients::at(const Tensor& leaf) const {
    if (!leaf.tracked() || leaf.tape() != tape_) {
        throw ContractError("gradient lookup: tensor is not tracked on this tape");
    }
    const auto& slot = grads_[leaf.node()];
    if (!slot) return Tensor::zeros(leaf.shape());
    return Tensor(leaf.shape(), *slot);
}

bool Gradients::reached(const Tensor& leaf) const {
    if (!leaf.tracked() || leaf.tape() != tape_) {
        throw ContractError("gradient lookup: tensor is not tracked on this tape");
    }
    return grads_[leaf.node()] != nullptr;
}

Gradients backward(const Tensor& loss) {
    if (!loss.tracked()) {
        throw ContractError("backward: loss is not tracked on any tape");
    }
    return loss.tape()->backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise with minimal broadcasting
// ---------------------------------------------------------------------------

namespace {

enum class Bcast { same, a_scalar, b_scalar, a_row, b_row };

Bcast resolve_bcast(const char* op, const Tensor& a, const Tensor& b, bool allow_row) {
    if (a.shape() == b.shape()) return Bcast::same;
    if (b.size() == 1) return Bcast::b_scalar;
    if (a.size() == 1) return Bcast::a_scalar;
    if (allow_row) {
        if (b.rank() == 1 && a.rank() >= 2 && a.shape().back() == b.size()) return Bcast::b_row;
        if (a.rank() == 1 && b.rank() >= 2 && b.shape().back() == a.size()) return Bcast::a_row;
    }
    throw DimensionError(msg(op, ": incompatible shapes ", shape_str(a.shape()), " and ",
                             shape_str(b.shape())));
}

// Accumulates dL/d(broadcast operand) given dL/d(out).
void reduce_scalar(const std::vector<double>& g, std::vector<double>& out, double sign) {
    double acc = 0.0;
    for (double v : g) acc += v;
    out[0] += sign * acc;
}

void reduce_row(const std::vector<double>& g, std::vector<double>& out, double sign) {
    const std::size_t k = out.size();
    for (std::size_t i = 0; i < g.size(); ++i) out[i % k] += sign * g[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const Bcast mode = resolve_bcast("add", a, b, true);
    const bool swap = (mode == Bcast::a_scalar || mode == Bcast::a_row);
    const Tensor& big = swap ? b : a;
    const Tensor& small = swap ? a : b;

    std::vector<double> out(big.data());
    if (mode == Bcast::same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += small.data()[i];
    } else if (mode == Bcast::a_scalar || mode == Bcast::b_scalar) {
        const double s = small.data()[0];
        for (double& v : out) v += s;
    } else {
        const std::size_t k = small.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += small.data()[i % k];
    }

    Tape* tape = common_tape({&a, &b});
    if (!tape) return plain("add", big.shape(), std::move(out));

    std::vector<int> parents;
    const bool ta = a.tracked(), tb = b.tracked();
    if (ta) parents.push_back(a.node());
    if (tb) parents.push_back(b.node());
    auto fn = [ta, tb, mode](const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& pg) {
        std::size_t s = 0;
        if (ta) {
            auto& buf = *pg[s++];
            if (mode == Bcast::a_scalar) reduce_scalar(g, buf, 1.0);
            else if (mode == Bcast::a_row) reduce_row(g, buf, 1.0);
            else for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
        }
        if (tb) {
            auto& buf = *pg[s++];
            if (mode == Bcast::b_scalar) reduce_scalar(g, buf, 1.0);
            else if (mode == Bcast::b_row) reduce_row(g, buf, 1.0);
            else for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
        }
    };
    return tape->record("add", big.shape(), std::move(out), std::move(parents), std::move(fn));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const Bcast mode = resolve_bcast("sub", a, b, true);

    Shape out_shape = (mode == Bcast::a_scalar || mode == Bcast::a_row) ? b.shape() : a.shape();
    std::vector<double> out(shape_size(out_shape));
    if (mode == Bcast::same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    } else if (mode == Bcast::b_scalar) {
        const double s = b.data()[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - s;
    } else if (mode == Bcast::a_scalar) {
        const double s = a.data()[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = s - b.data()[i];
    } else if (mode == Bcast::b_row) {
        const std::size_t k = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i % k];
    } else {
        const std::size_t k = a.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i % k] - b.data()[i];
    }

    Tape* tape = common_tape({&a, &b});
    if (!tape) return plain("sub", std::move(out_shape), std::move(out));

    std::vector<int> parents;
    const bool ta = a.tracked(), tb = b.tracked();
    if (ta) parents.push_back(a.node());
    if (tb) parents.push_back(b.node());
    auto fn = [ta, tb, mode](const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& pg) {
        std::size_t s = 0;
        if (ta) {
            auto& buf = *pg[s++];
            if (mode == Bcast::a_scalar) reduce_scalar(g, buf, 1.0);
            else if (mode == Bcast::a_row) reduce_row(g, buf, 1.0);
            else for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
        }
        if (tb) {
            auto& buf = *pg[s++];
            if (mode == Bcast::b_scalar) reduce_scalar(g, buf, -1.0);
            else if (mode == Bcast::b_row) reduce_row(g, buf, -1.0);
            else for (std::size_t i = 0; i < g.size(); ++i) buf[i] -= g[i];
        }
    };
    return tape->record("sub", std::move(out_shape), std::move(out), std::move(parents),
                        std::move(fn));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const Bcast mode = resolve_bcast("mul", a, b, false);
    const bool swap = (mode == Bcast::a_scalar);
    const Tensor& big = swap ? b : a;
    const Tensor& small = swap ? a : b;

    std::vector<double> out(big.size());
    if (mode == Bcast::same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    } else {
        const double s = small.data()[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = big.data()[i] * s;
    }

    Tape* tape = common_tape({&a, &b});
    if (!tape) return plain("mul", big.shape(), std::move(out));

    std::vector<int> parents;
    const bool ta = a.tracked(), tb = b.tracked();
    if (ta) parents.push_back(a.node());
    if (tb) parents.push_back(b.node());
    auto fn = [ta, tb, mode, a, b](const std::vector<double>& g,
                                   const std::vector<std::vector<double>*>& pg) {
        const auto& adata = a.data();
        const auto& bdata = b.data();
        std::size_t s = 0;
        if (ta) {
            auto& buf = *pg[s++];
            if (mode == Bcast::same) {
                for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * bdata[i];
            } else if (mode == Bcast::a_scalar) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * bdata[i];
                buf[0] += acc;
            } else {  // b scalar
                const double bs = bdata[0];
                for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * bs;
            }
        }
        if (tb) {
            auto& buf = *pg[s++];
            if (mode == Bcast::same) {
                for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * adata[i];
            } else if (mode == Bcast::b_scalar) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * adata[i];
                buf[0] += acc;
            } else {  // a scalar
                const double as = adata[0];
                for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * as;
            }
        }
    };
    return tape->record("mul", big.shape(), std::move(out), std::move(parents), std::move(fn));
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
    if (!x.tracked()) return plain("scale", x.shape(), std::move(out));
    auto fn = [c](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * c;
    };
    return x.tape()->record("scale", x.shape(), std::move(out), {x.node()}, std::move(fn));
}

Tensor add_scalar(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + c;
    if (!x.tracked()) return plain("add_scalar", x.shape(), std::move(out));
    auto fn = [](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    };
    return x.tape()->record("add_scalar", x.shape(), std::move(out), {x.node()}, std::move(fn));
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError(msg("matmul: operands must be rank-2, got ", shape_str(a.shape()),
                                 " and ", shape_str(b.shape())));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw DimensionError(msg("matmul: inner extents differ, ", shape_str(a.shape()), " vs ",
                                 shape_str(b.shape())));
    }

    std::vector<double> out(m * n, 0.0);
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        double* C = out.data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A[i * k + p];
                if (av == 0.0) continue;
                const double* brow = B + p * n;
                double* crow = C + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    Tape* tape = common_tape({&a, &b});
    if (!tape) return plain("matmul", {m, n}, std::move(out));

    std::vector<int> parents;
    const bool ta = a.tracked(), tb = b.tracked();
    if (ta) parents.push_back(a.node());
    if (tb) parents.push_back(b.node());
    auto fn = [ta, tb, m, k, n, a, b](const std::vector<double>& g,
                                      const std::vector<std::vector<double>*>& pg) {
        std::size_t s = 0;
        if (ta) {  // dA = G * B^T
            const double* bdata = b.data().data();
            double* da = pg[s++]->data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double* grow = g.data() + i * n;
                    const double* brow = bdata + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    da[i * k + p] += acc;
                }
            }
        }
        if (tb) {  // dB = A^T * G
            const double* adata = a.data().data();
            double* db = pg[s++]->data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = adata[i * k + p];
                    if (av == 0.0) continue;
                    double* drow = db + p * n;
                    for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                }
            }
        }
    };
    return tape->record("matmul", {m, n}, std::move(out), std::move(parents), std::move(fn));
}

// ---------------------------------------------------------------------------
// Convolution and pooling (NHWC)
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, Padding padding) {
    if (input.rank() != 4) {
        throw DimensionError(msg("conv2d: input must be rank-4 NHWC, got ",
                                 shape_str(input.shape())));
    }
    if (kernel.rank() != 4) {
        throw DimensionError(msg("conv2d: kernel must be rank-4 [kh, kw, cin, cout], got ",
                                 shape_str(kernel.shape())));
    }
    if (stride == 0) throw ContractError("conv2d: stride must be positive");
    const std::size_t N = input.shape()[0], H = input.shape()[1], W = input.shape()[2],
                      Cin = input.shape()[3];
    const std::size_t kh = kernel.shape()[0], kw = kernel.shape()[1], kcin = kernel.shape()[2],
                      Cout = kernel.shape()[3];
    if (kcin != Cin) {
        throw DimensionError(msg("conv2d: input channels ", shape_str(input.shape()),
                                 " do not match kernel ", shape_str(kernel.shape())));
    }

    std::size_t OH, OW, pad_top = 0, pad_left = 0, PH = H, PW = W;
    if (padding == Padding::valid) {
        if (kh > H || kw > W) {
            throw DimensionError(msg("conv2d: kernel ", shape_str(kernel.shape()),
                                     " larger than input ", shape_str(input.shape()),
                                     " under valid padding"));
        }
        OH = (H - kh) / stride + 1;
        OW = (W - kw) / stride + 1;
    } else {
        OH = (H + stride - 1) / stride;
        OW = (W + stride - 1) / stride;
        const std::size_t need_h = (OH - 1) * stride + kh;
        const std::size_t need_w = (OW - 1) * stride + kw;
        const std::size_t pad_h = need_h > H ? need_h - H : 0;
        const std::size_t pad_w = need_w > W ? need_w - W : 0;
        pad_top = pad_h / 2;
        pad_left = pad_w / 2;
        PH = H + pad_h;
        PW = W + pad_w;
    }

    std::vector<double> xpad(N * PH * PW * Cin, 0.0);
    for (std::size_t nn = 0; nn < N; ++nn) {
        for (std::size_t h = 0; h < H; ++h) {
            const double* src = input.data().data() + ((nn * H + h) * W) * Cin;
            double* dst = xpad.data() + ((nn * PH + h + pad_top) * PW + pad_left) * Cin;
            std::memcpy(dst, src, W * Cin * sizeof(double));
        }
    }

    std::vector<double> out(N * OH * OW * Cout, 0.0);
    {
        const double* K = kernel.data().data();
        for (std::size_t nn = 0; nn < N; ++nn) {
            for (std::size_t oh = 0; oh < OH; ++oh) {
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    double* orow = out.data() + ((nn * OH + oh) * OW + ow) * Cout;
                    for (std::size_t i = 0; i < kh; ++i) {
                        for (std::size_t j = 0; j < kw; ++j) {
                            const double* xrow =
                                xpad.data() +
                                ((nn * PH + oh * stride + i) * PW + ow * stride + j) * Cin;
                            const double* krow = K + ((i * kw + j) * Cin) * Cout;
                            for (std::size_t ci = 0; ci < Cin; ++ci) {
                                const double xv = xrow[ci];
                                if (xv == 0.0) continue;
                                const double* kc = krow + ci * Cout;
                                for (std::size_t co = 0; co < Cout; ++co) {
                                    orow[co] += xv * kc[co];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Tape* tape = common_tape({&input, &kernel});
    if (!tape) return plain("conv2d", {N, OH, OW, Cout}, std::move(out));

    std::vector<int> parents;
    const bool ti = input.tracked(), tk = kernel.tracked();
    if (ti) parents.push_back(input.node());
    if (tk) parents.push_back(kernel.node());
    auto fn = [=, xpad = std::move(xpad), kernel = kernel](
                  const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        const auto& kdata = kernel.data();
        std::vector<double> gxpad;
        if (ti) gxpad.assign(N * PH * PW * Cin, 0.0);
        std::size_t s = 0;
        double* gx = ti ? gxpad.data() : nullptr;
        double* gk = nullptr;
        if (ti) ++s;
        if (tk) gk = pg[s]->data();
        for (std::size_t nn = 0; nn < N; ++nn) {
            for (std::size_t oh = 0; oh < OH; ++oh) {
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const double* grow = g.data() + ((nn * OH + oh) * OW + ow) * Cout;
                    for (std::size_t i = 0; i < kh; ++i) {
                        for (std::size_t j = 0; j < kw; ++j) {
                            const std::size_t xoff =
                                ((nn * PH + oh * stride + i) * PW + ow * stride + j) * Cin;
                            const std::size_t koff = ((i * kw + j) * Cin) * Cout;
                            for (std::size_t ci = 0; ci < Cin; ++ci) {
                                double gx_acc = 0.0;
                                const double xv = xpad[xoff + ci];
                                for (std::size_t co = 0; co < Cout; ++co) {
                                    const double gv = grow[co];
                                    if (gv == 0.0) continue;
                                    if (gk) gk[koff + ci * Cout + co] += gv * xv;
                                    gx_acc += gv * kdata[koff + ci * Cout + co];
                                }
                                if (gx) gx[xoff + ci] += gx_acc;
                            }
                        }
                    }
                }
            }
        }
        if (ti) {  // crop padding away
            double* dst = pg[0]->data();
            for (std::size_t nn = 0; nn < N; ++nn) {
                for (std::size_t h = 0; h < H; ++h) {
                    const double* src =
                        gxpad.data() + ((nn * PH + h + pad_top) * PW + pad_left) * Cin;
                    double* drow = dst + ((nn * H + h) * W) * Cin;
                    for (std::size_t i = 0; i < W * Cin; ++i) drow[i] += src[i];
                }
            }
        }
    };
    return tape->record("conv2d", {N, OH, OW, Cout}, std::move(out), std::move(parents),
                        std::move(fn));
}

Tensor maxpool2(const Tensor& x) {
    if (x.rank() != 4) {
        throw DimensionError(msg("maxpool2: input must be rank-4 NHWC, got ",
                                 shape_str(x.shape())));
    }
    const std::size_t N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
    if (H < 2 || W < 2) {
        throw DimensionError(msg("maxpool2: spatial extents must be at least 2, got ",
                                 shape_str(x.shape())));
    }
    const std::size_t OH = H / 2, OW = W / 2;

    std::vector<double> out(N * OH * OW * C);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t nn = 0; nn < N; ++nn) {
        for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow) {
                for (std::size_t c = 0; c < C; ++c) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t di = 0; di < 2; ++di) {
                        for (std::size_t dj = 0; dj < 2; ++dj) {
                            const std::size_t idx =
                                ((nn * H + oh * 2 + di) * W + ow * 2 + dj) * C + c;
                            if (x.data()[idx] > best) {
                                best = x.data()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    const std::size_t o = ((nn * OH + oh) * OW + ow) * C + c;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }

    if (!x.tracked()) return plain("maxpool2", {N, OH, OW, C}, std::move(out));
    auto fn = [argmax = std::move(argmax)](const std::vector<double>& g,
                                           const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) buf[argmax[i]] += g[i];
    };
    return x.tape()->record("maxpool2", {N, OH, OW, C}, std::move(out), {x.node()},
                            std::move(fn));
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

double softplus_value(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

template <typename Fwd, typename Grad>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Grad grad) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.data()[i]);
    if (!x.tracked()) return plain(op, x.shape(), std::move(out));
    auto fn = [grad, x](const std::vector<double>& g,
                        const std::vector<std::vector<double>*>& pg) {
        const auto& xdata = x.data();
        auto& buf = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * grad(xdata[i]);
    };
    return x.tape()->record(op, x.shape(), std::move(out), {x.node()}, std::move(fn));
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_op(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x) {
    return unary_op("softplus", x, softplus_value, sigmoid_value);
}

Tensor sigmoid(const Tensor& x) {
    return unary_op("sigmoid", x, sigmoid_value, [](double v) {
        const double s = sigmoid_value(v);
        return s * (1.0 - s);
    });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (v <= 0.0) throw NumericError(msg("log: non-positive input ", v));
    }
    return unary_op(
        "log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        "exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    if (!x.tracked()) return plain("sum", {}, {acc});
    auto fn = [](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        for (double& v : buf) v += g[0];
    };
    return x.tape()->record("sum", {}, {acc}, {x.node()}, std::move(fn));
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ContractError("mean of empty tensor");
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.size());
    acc *= inv;
    if (!x.tracked()) return plain("mean", {}, {acc});
    auto fn = [inv](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        for (double& v : buf) v += g[0] * inv;
    };
    return x.tape()->record("mean", {}, {acc}, {x.node()}, std::move(fn));
}

// ---------------------------------------------------------------------------
// Rearrangement
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError(msg("reshape: cannot reshape ", shape_str(x.shape()), " to ",
                                 shape_str(shape)));
    }
    if (!x.tracked()) return Tensor(std::move(shape), x.data());
    auto fn = [](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    };
    return x.tape()->record("reshape", std::move(shape), x.data(), {x.node()}, std::move(fn));
}

Tensor slice1d(const Tensor& x, std::size_t begin, std::size_t len) {
    if (x.rank() != 1) {
        throw DimensionError(msg("slice1d: input must be rank-1, got ", shape_str(x.shape())));
    }
    if (begin + len > x.size()) {
        throw IndexError(msg("slice1d: range [", begin, ", ", begin + len, ") exceeds length ",
                             x.size()));
    }
    std::vector<double> out(x.data().begin() + begin, x.data().begin() + begin + len);
    if (!x.tracked()) return Tensor({len}, std::move(out));
    auto fn = [begin](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) buf[begin + i] += g[i];
    };
    return x.tape()->record("slice1d", {len}, std::move(out), {x.node()}, std::move(fn));
}

Tensor concat1d(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat1d: no inputs");
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 1) {
            throw DimensionError(msg("concat1d: inputs must be rank-1, got ",
                                     shape_str(p.shape())));
        }
        total += p.size();
    }
    std::vector<double> out;
    out.reserve(total);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

    Tape* tape = nullptr;
    for (const Tensor& p : parts) {
        if (!p.tracked()) continue;
        if (!tape) tape = p.tape();
        else if (tape != p.tape()) throw ContractError("concat1d: mixed tapes");
    }
    if (!tape) return plain("concat1d", {total}, std::move(out));

    // (offset-in-output, length) per tracked part, aligned with parents order
    std::vector<int> parents;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        if (p.tracked()) {
            parents.push_back(p.node());
            spans.emplace_back(off, p.size());
        }
        off += p.size();
    }
    auto fn = [spans = std::move(spans)](const std::vector<double>& g,
                                         const std::vector<std::vector<double>*>& pg) {
        for (std::size_t k = 0; k < spans.size(); ++k) {
            auto& buf = *pg[k];
            for (std::size_t i = 0; i < spans[k].second; ++i) buf[i] += g[spans[k].first + i];
        }
    };
    return tape->record("concat1d", {total}, std::move(out), std::move(parents), std::move(fn));
}

Tensor stack_rows(std::span<const Tensor> rows) {
    if (rows.empty()) throw ContractError("stack_rows: no inputs");
    const std::size_t k = rows.front().size();
    for (const Tensor& r : rows) {
        if (r.rank() != 1 || r.size() != k) {
            throw DimensionError(msg("stack_rows: rows must be rank-1 of equal length ", k,
                                     ", got ", shape_str(r.shape())));
        }
    }
    const std::size_t n = rows.size();
    std::vector<double> out;
    out.reserve(n * k);
    for (const Tensor& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());

    Tape* tape = nullptr;
    for (const Tensor& r : rows) {
        if (!r.tracked()) continue;
        if (!tape) tape = r.tape();
        else if (tape != r.tape()) throw ContractError("stack_rows: mixed tapes");
    }
    if (!tape) return plain("stack_rows", {n, k}, std::move(out));

    std::vector<int> parents;
    std::vector<std::size_t> row_of;  // output row per tracked parent
    for (std::size_t r = 0; r < n; ++r) {
        if (rows[r].tracked()) {
            parents.push_back(rows[r].node());
            row_of.push_back(r);
        }
    }
    auto fn = [k, row_of = std::move(row_of)](const std::vector<double>& g,
                                              const std::vector<std::vector<double>*>& pg) {
        for (std::size_t p = 0; p < row_of.size(); ++p) {
            auto& buf = *pg[p];
            const double* grow = g.data() + row_of[p] * k;
            for (std::size_t i = 0; i < k; ++i) buf[i] += grow[i];
        }
    };
    return tape->record("stack_rows", {n, k}, std::move(out), std::move(parents), std::move(fn));
}

Tensor gather1d(const Tensor& x, const std::vector<std::size_t>& idx) {
    if (x.rank() != 1) {
        throw DimensionError(msg("gather1d: input must be rank-1, got ", shape_str(x.shape())));
    }
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.size()) {
            throw IndexError(msg("gather1d: index ", idx[i], " out of range for length ",
                                 x.size()));
        }
        out[i] = x.data()[idx[i]];
    }
    if (!x.tracked()) return Tensor({idx.size()}, std::move(out));
    auto fn = [idx](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) buf[idx[i]] += g[i];
    };
    return x.tape()->record("gather1d", {idx.size()}, std::move(out), {x.node()}, std::move(fn));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw DimensionError(msg("softmax_cross_entropy: logits must be rank-2, got ",
                                 shape_str(logits.shape())));
    }
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    if (labels.size() != n) {
        throw DimensionError(msg("softmax_cross_entropy: ", labels.size(), " labels for ", n,
                                 " rows"));
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= c) {
            throw IndexError(msg("softmax_cross_entropy: label ", l, " out of range [0, ", c,
                                 ")"));
        }
    }

    std::vector<double> probs(n * c);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = logits.data().data() + r * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(row[j] - lse);
        loss += lse - row[labels[r]];
    }
    loss /= static_cast<double>(n);

    if (!logits.tracked()) return plain("softmax_cross_entropy", {}, {loss});
    auto fn = [n, c, labels, probs = std::move(probs)](
                  const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        auto& buf = *pg[0];
        const double inv = g[0] / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < c; ++j) {
                double v = probs[r * c + j];
                if (j == static_cast<std::size_t>(labels[r])) v -= 1.0;
                buf[r * c + j] += inv * v;
            }
        }
    };
    return logits.tape()->record("softmax_cross_entropy", {}, {loss}, {logits.node()},
                                 std::move(fn));
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits, const std::vector<double>& targets) {
    if (logits.size() != targets.size()) {
        throw DimensionError(msg("binary_cross_entropy_with_logits: ", logits.size(),
                                 " logits vs ", targets.size(), " targets"));
    }
    if (logits.size() == 0) throw ContractError("binary_cross_entropy_with_logits: empty input");
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double l = logits.data()[i];
        const double y = targets[i];
        loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
    }
    loss /= static_cast<double>(logits.size());

    if (!logits.tracked()) return plain("binary_cross_entropy_with_logits", {}, {loss});
    auto fn = [targets, logits](const std::vector<double>& g,
                                const std::vector<std::vector<double>*>& pg) {
        const auto& ldata = logits.data();
        auto& buf = *pg[0];
        const double inv = g[0] / static_cast<double>(ldata.size());
        for (std::size_t i = 0; i < ldata.size(); ++i) {
            buf[i] += inv * (sigmoid_value(ldata[i]) - targets[i]);
        }
    };
    return logits.tape()->record("binary_cross_entropy_with_logits", {}, {loss},
                                 {logits.node()}, std::move(fn));
}

std::vector<double> softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw DimensionError(msg("softmax_rows: logits must be rank-2, got ",
                                 shape_str(logits.shape())));
    }
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    std::vector<double> probs(n * c);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = logits.data().data() + r * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(row[j] - mx) / z;
    }
    return probs;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification
// ---------------------------------------------------------------------------

double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor y = f(xl);
    if (y.size() != 1) {
        throw ContractError("gradient_check: f must be scalar-valued");
    }
    Gradients grads = tape.backward(y);
    Tensor analytic = grads.at(xl);

    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor xp(x.shape(), x.data());
        Tensor xm(x.shape(), x.data());
        xp.data()[i] += h;
        xm.data()[i] -= h;
        const double numeric = (f(xp).item() - f(xm).item()) / (2.0 * h);
        const double a = analytic.data()[i];
        const double rel =
            std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace bbh

#pragma once

/**
 * @file autodiff.hpp
 * @brief Reverse-mode automatic differentiation over dense row-major double arrays.
 *
 * A Tensor is a handle to a graph node. Operations record their inputs and a
 * backward closure only when some input requires a gradient, so inference
 * passes build no graph. `backward(loss)` runs the tape for a scalar root and
 * accumulates into every reachable node; parameters keep their gradients
 * until `zero_grad`.
 *
 * Image-like arrays use [batch, channels, rows, cols].
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "rvl/common.hpp"
#include "rvl/rvhm.hpp"

namespace rvl::ad {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor constant(Shape shape, std::vector<double> values) {
        if (numel(shape) != values.size())
            throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        return Tensor(std::move(n));
    }
    static Tensor zeros(Shape shape) {
        auto n = numel(shape);
        return constant(std::move(shape), std::vector<double>(n, 0.0));
    }
    static Tensor parameter(Shape shape, std::vector<double> values) {
        Tensor t = constant(std::move(shape), std::move(values));
        t.node_->requires_grad = true;
        t.node_->ensure_grad();
        return t;
    }
    static Tensor scalar(double v) { return constant({1}, {v}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& mutable_values() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    double item() const {
        if (size() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
        return node_->value[0];
    }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
    Tensor detach() const { return constant(shape(), values()); }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Build an op result; the closure is kept only if some input needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    for (const auto& t : inputs) rg = rg || t.requires_grad();
    if (rg) {
        n->requires_grad = true;
        for (auto& t : inputs) n->inputs.push_back(t.node());
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

/// Gradient sink for input `i`, or nullptr when that input is constant.
inline std::vector<double>* grad_of(Node& self, std::size_t i) {
    Node& in = *self.inputs[i];
    if (!in.requires_grad) return nullptr;
    in.ensure_grad();
    return &in.grad;
}

/// Run the tape from a scalar root. Interior nodes release their closures afterwards.
inline void backward(const Tensor& root) {
    if (root.size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;
    std::vector<std::shared_ptr<Node>> order;  // owning, so releasing closures cannot free pending nodes
    std::unordered_set<Node*> seen;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->inputs.size()) {
            std::shared_ptr<Node> child = n->inputs[i++];
            if (child->requires_grad && seen.insert(child.get()).second) stack.push_back({std::move(child), 0});
        } else {
            order.push_back(std::move(n));
            stack.pop_back();
        }
    }
    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = it->get();
        if (n->backward) {
            n->ensure_grad();
            n->backward(*n);
            n->backward = nullptr;
            n->inputs.clear();
        }
    }
}

namespace detail {

inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": operand shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

inline void want_rank(const Tensor& a, std::size_t r, const char* op, const char* name = "input") {
    if (a.rank() != r)
        throw ShapeError(std::string(op) + ": " + name + " must have rank " + std::to_string(r) + ", got " +
                         shape_str(a.shape()));
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

/// C (+)= op(A) op(B). Operands are copied into owned (aligned) storage first:
/// Eigen's vector paths peel on the runtime alignment of a Map, which would make
/// results depend on where std::vector happened to allocate.
inline void gemm(double* C, bool accumulate, const double* A, int ar, int ac, bool ta, const double* B, int br, int bc,
                 bool tb) {
    const RowMat a = CMapM(A, ar, ac), b = CMapM(B, br, bc);
    RowMat c;
    if (ta && tb) c.noalias() = a.transpose() * b.transpose();
    else if (ta) c.noalias() = a.transpose() * b;
    else if (tb) c.noalias() = a * b.transpose();
    else c.noalias() = a * b;
    const double* src = c.data();
    const std::size_t n = static_cast<std::size_t>(c.size());
    if (accumulate)
        for (std::size_t i = 0; i < n; ++i) C[i] += src[i];
    else
        std::copy(src, src + n, C);
}

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
    std::vector<double> y(a.size());
    const auto& x = a.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
    return make_result(a.shape(), std::move(y), {a}, [df](Node& self) {
        auto* gx = grad_of(self, 0);
        if (!gx) return;
        const auto& x = self.inputs[0]->value;
        for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += self.grad[i] * df(x[i], self.value[i]);
    });
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "add");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
    return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (auto* g = grad_of(self, k))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "sub");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] - b.values()[i];
    return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = grad_of(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::same_shape(a, b, "mul");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] * b.values()[i];
    return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        if (auto* g = grad_of(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    });
}

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; },
                         [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.01) {
    return detail::unary(a, [slope](double x) { return x > 0 ? x : slope * x; },
                         [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor softplus(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
        [](double x, double) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    for (double x : a.values())
        if (!(x > 0)) throw NumericError("log: non-positive argument " + std::to_string(x));
    return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// Broadcast product x[B,C,H,W] * m[B,1,H,W] (mask applied to every channel).
inline Tensor mask_product(const Tensor& x, const Tensor& m) {
    detail::want_rank(x, 4, "mask_product");
    detail::want_rank(m, 4, "mask_product", "mask");
    if (m.dim(0) != x.dim(0) || m.dim(1) != 1 || m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3))
        throw ShapeError("mask_product: mask " + shape_str(m.shape()) + " incompatible with " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1);
    const std::size_t P = static_cast<std::size_t>(x.dim(2)) * static_cast<std::size_t>(x.dim(3));
    std::vector<double> y(x.size());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p)
                y[(static_cast<std::size_t>(b) * C + c) * P + p] =
                    x.values()[(static_cast<std::size_t>(b) * C + c) * P + p] * m.values()[b * P + p];
    return make_result(x.shape(), std::move(y), {x, m}, [B, C, P](Node& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& mv = self.inputs[1]->value;
        auto* gx = grad_of(self, 0);
        auto* gm = grad_of(self, 1);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (std::size_t p = 0; p < P; ++p) {
                    std::size_t i = (static_cast<std::size_t>(b) * C + c) * P + p;
                    if (gx) (*gx)[i] += self.grad[i] * mv[b * P + p];
                    if (gm) (*gm)[b * P + p] += self.grad[i] * xv[i];
                }
    });
}

// ---- reductions and reshaping ---------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0;
    for (double v : a.values()) s += v;
    return make_result({1}, {s}, {a}, [](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (auto& v : *g) v += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    return make_result(std::move(shape), a.values(), {a}, [](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

/// Flatten [B, ...] to [B, prod(...)].
inline Tensor flatten(const Tensor& a) {
    const int B = a.dim(0);
    return reshape(a, {B, static_cast<int>(a.size() / static_cast<std::size_t>(B))});
}

/// Global average pool [B,C,H,W] -> [B,C].
inline Tensor global_avg_pool(const Tensor& x) {
    detail::want_rank(x, 4, "global_avg_pool");
    const int B = x.dim(0), C = x.dim(1);
    const std::size_t P = static_cast<std::size_t>(x.dim(2)) * static_cast<std::size_t>(x.dim(3));
    std::vector<double> y(static_cast<std::size_t>(B) * C, 0.0);
    for (std::size_t bc = 0; bc < y.size(); ++bc) {
        double s = 0;
        for (std::size_t p = 0; p < P; ++p) s += x.values()[bc * P + p];
        y[bc] = s / static_cast<double>(P);
    }
    return make_result({B, C}, std::move(y), {x}, [P](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t bc = 0; bc < self.grad.size(); ++bc)
                for (std::size_t p = 0; p < P; ++p) (*g)[bc * P + p] += self.grad[bc] / static_cast<double>(P);
    });
}

/// Maximum over the trailing axis; gradient flows to the first maximiser.
inline Tensor max_over_bins(const Tensor& a) {
    if (a.rank() < 1) throw ShapeError("max_over_bins: scalar input");
    const std::size_t M = static_cast<std::size_t>(a.shape().back());
    const std::size_t R = a.size() / M;
    Shape out(a.shape().begin(), a.shape().end() - 1);
    if (out.empty()) out = {1};
    std::vector<double> y(R);
    std::vector<std::size_t> arg(R);
    for (std::size_t r = 0; r < R; ++r) {
        std::size_t best = 0;
        for (std::size_t m = 1; m < M; ++m)
            if (a.values()[r * M + m] > a.values()[r * M + best]) best = m;
        arg[r] = best;
        y[r] = a.values()[r * M + best];
    }
    return make_result(std::move(out), std::move(y), {a}, [arg = std::move(arg), M](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t r = 0; r < arg.size(); ++r) (*g)[r * M + arg[r]] += self.grad[r];
    });
}

// ---- linear algebra --------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::want_rank(a, 2, "matmul", "left operand");
    detail::want_rank(b, 2, "matmul", "right operand");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: operand shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are not conformable");
    std::vector<double> y(static_cast<std::size_t>(m) * n);
    detail::gemm(y.data(), false, a.values().data(), m, k, false, b.values().data(), k, n, false);
    return make_result({m, n}, std::move(y), {a, b}, [m, k, n](Node& self) {
        const double* G = self.grad.data();
        if (auto* ga = grad_of(self, 0))
            detail::gemm(ga->data(), true, G, m, n, false, self.inputs[1]->value.data(), k, n, true);
        if (auto* gb = grad_of(self, 1))
            detail::gemm(gb->data(), true, self.inputs[0]->value.data(), m, k, true, G, m, n, false);
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::want_rank(a, 2, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> y(a.size());
    detail::MapM(y.data(), n, m) = detail::CMapM(a.values().data(), m, n).transpose();
    return make_result({n, m}, std::move(y), {a}, [m, n](Node& self) {
        if (auto* g = grad_of(self, 0))
            detail::MapM(g->data(), m, n) += detail::CMapM(self.grad.data(), n, m).transpose();
    });
}

/// y[B,out] = x[B,in] W[out,in]^T + b[out].
inline Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
    detail::want_rank(x, 2, "linear");
    detail::want_rank(W, 2, "linear", "weight");
    const int B = x.dim(0), in = x.dim(1), out = W.dim(0);
    if (W.dim(1) != in || b.size() != static_cast<std::size_t>(out))
        throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(W.shape()) + ", bias " +
                         shape_str(b.shape()) + " are inconsistent");
    std::vector<double> y(static_cast<std::size_t>(B) * out);
    detail::gemm(y.data(), false, x.values().data(), B, in, false, W.values().data(), out, in, true);
    for (int r = 0; r < B; ++r)
        for (int j = 0; j < out; ++j) y[static_cast<std::size_t>(r) * out + j] += b.values()[j];
    return make_result({B, out}, std::move(y), {x, W, b}, [B, in, out](Node& self) {
        const double* G = self.grad.data();
        if (auto* gx = grad_of(self, 0))
            detail::gemm(gx->data(), true, G, B, out, false, self.inputs[1]->value.data(), out, in, false);
        if (auto* gw = grad_of(self, 1))
            detail::gemm(gw->data(), true, G, B, out, true, self.inputs[0]->value.data(), B, in, false);
        if (auto* gb = grad_of(self, 2))
            for (int r = 0; r < B; ++r)
                for (int j = 0; j < out; ++j) (*gb)[j] += G[static_cast<std::size_t>(r) * out + j];
    });
}

// ---- convolution and pooling ----------------------------------------------

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// Cross-correlation x[B,C,H,W] * W[O,C,k,k] + b[O] with zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& W, const Tensor& b, int stride = 1, int pad = 0) {
    detail::want_rank(x, 4, "conv2d");
    detail::want_rank(W, 4, "conv2d", "kernel");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
    const int O = W.dim(0), k = W.dim(2);
    if (W.dim(1) != C || W.dim(3) != k || b.size() != static_cast<std::size_t>(O))
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + ", kernel " + shape_str(W.shape()) + ", bias " +
                         shape_str(b.shape()) + " are inconsistent");
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
    const int Ho = conv_out_size(H, k, stride, pad), Wo = conv_out_size(Wd, k, stride, pad);
    if (Ho < 1 || Wo < 1)
        throw ShapeError("conv2d: kernel " + shape_str(W.shape()) + " larger than padded input " + shape_str(x.shape()));
    const int K = C * k * k, P = Ho * Wo;
    const std::size_t colsz = static_cast<std::size_t>(K) * P;
    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * colsz, 0.0);
    const auto& xv = x.values();
    for (int n = 0; n < B; ++n) {
        double* col = cols->data() + n * colsz;
        for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) {
                    double* row = col + static_cast<std::size_t>((c * k + ki) * k + kj) * P;
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride - pad + ki;
                        if (iy < 0 || iy >= H) continue;
                        const double* src = xv.data() + ((static_cast<std::size_t>(n) * C + c) * H + iy) * Wd;
                        for (int ox = 0; ox < Wo; ++ox) {
                            int ix = ox * stride - pad + kj;
                            if (ix >= 0 && ix < Wd) row[oy * Wo + ox] = src[ix];
                        }
                    }
                }
    }
    std::vector<double> y(static_cast<std::size_t>(B) * O * P);
    for (int n = 0; n < B; ++n) {
        double* Y = y.data() + static_cast<std::size_t>(n) * O * P;
        detail::gemm(Y, false, W.values().data(), O, K, false, cols->data() + n * colsz, K, P, false);
        for (int o = 0; o < O; ++o)
            for (int p = 0; p < P; ++p) Y[static_cast<std::size_t>(o) * P + p] += b.values()[o];
    }
    return make_result({B, O, Ho, Wo}, std::move(y), {x, W, b},
                       [=, cols = std::move(cols)](Node& self) {
                           auto* gx = grad_of(self, 0);
                           auto* gw = grad_of(self, 1);
                           auto* gb = grad_of(self, 2);
                           const double* Wm = self.inputs[1]->value.data();
                           std::vector<double> dcol(colsz);
                           for (int n = 0; n < B; ++n) {
                               const double* G = self.grad.data() + static_cast<std::size_t>(n) * O * P;
                               if (gw) detail::gemm(gw->data(), true, G, O, P, false, cols->data() + n * colsz, K, P, true);
                               if (gb)
                                   for (int o = 0; o < O; ++o)
                                       for (int p = 0; p < P; ++p) (*gb)[o] += G[static_cast<std::size_t>(o) * P + p];
                               if (!gx) continue;
                               detail::gemm(dcol.data(), false, Wm, O, K, true, G, O, P, false);
                               for (int c = 0; c < C; ++c)
                                   for (int ki = 0; ki < k; ++ki)
                                       for (int kj = 0; kj < k; ++kj) {
                                           const double* row = dcol.data() + static_cast<std::size_t>((c * k + ki) * k + kj) * P;
                                           for (int oy = 0; oy < Ho; ++oy) {
                                               int iy = oy * stride - pad + ki;
                                               if (iy < 0 || iy >= H) continue;
                                               double* dst = gx->data() + ((static_cast<std::size_t>(n) * C + c) * H + iy) * Wd;
                                               for (int ox = 0; ox < Wo; ++ox) {
                                                   int ix = ox * stride - pad + kj;
                                                   if (ix >= 0 && ix < Wd) dst[ix] += row[oy * Wo + ox];
                                               }
                                           }
                                       }
                           }
                       });
}

/// Average pooling with a k x k window and the given stride, no padding.
inline Tensor avg_pool2d(const Tensor& x, int k, int stride) {
    detail::want_rank(x, 4, "avg_pool2d");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
    const int Ho = conv_out_size(H, k, stride, 0), Wo = conv_out_size(Wd, k, stride, 0);
    if (k < 1 || stride < 1 || Ho < 1 || Wo < 1)
        throw ShapeError("avg_pool2d: window " + std::to_string(k) + " does not fit " + shape_str(x.shape()));
    const double inv = 1.0 / (k * k);
    std::vector<double> y(static_cast<std::size_t>(B) * C * Ho * Wo, 0.0);
    for (int bc = 0; bc < B * C; ++bc)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double s = 0;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j)
                        s += x.values()[(static_cast<std::size_t>(bc) * H + oy * stride + i) * Wd + ox * stride + j];
                y[(static_cast<std::size_t>(bc) * Ho + oy) * Wo + ox] = s * inv;
            }
    return make_result({B, C, Ho, Wo}, std::move(y), {x}, [=](Node& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        for (int bc = 0; bc < B * C; ++bc)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double v = self.grad[(static_cast<std::size_t>(bc) * Ho + oy) * Wo + ox] * inv;
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j)
                            (*g)[(static_cast<std::size_t>(bc) * H + oy * stride + i) * Wd + ox * stride + j] += v;
                }
    });
}

// ---- normalisation ---------------------------------------------------------

namespace detail {

/// y = x / sqrt(|x|^2 + eps) over groups of `len` values spaced `stride` apart.
inline Tensor normalize_groups(const Tensor& a, std::size_t groups, std::size_t len,
                               std::function<std::size_t(std::size_t, std::size_t)> index, double eps) {
    std::vector<double> y(a.size());
    std::vector<double> norms(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        double s = eps;
        for (std::size_t i = 0; i < len; ++i) s += a.values()[index(g, i)] * a.values()[index(g, i)];
        norms[g] = std::sqrt(s);
        for (std::size_t i = 0; i < len; ++i) y[index(g, i)] = a.values()[index(g, i)] / norms[g];
    }
    return make_result(a.shape(), std::move(y), {a},
                       [groups, len, index, norms = std::move(norms)](Node& self) {
                           auto* gx = grad_of(self, 0);
                           if (!gx) return;
                           for (std::size_t g = 0; g < groups; ++g) {
                               double dot = 0;
                               for (std::size_t i = 0; i < len; ++i) dot += self.grad[index(g, i)] * self.value[index(g, i)];
                               for (std::size_t i = 0; i < len; ++i) {
                                   std::size_t j = index(g, i);
                                   (*gx)[j] += (self.grad[j] - self.value[j] * dot) / norms[g];
                               }
                           }
                       });
}

}  // namespace detail

/// Row-wise L2 normalisation of x[B,N].
inline Tensor normalize_l2(const Tensor& x, double eps = 1e-12) {
    detail::want_rank(x, 2, "normalize_l2");
    const std::size_t B = static_cast<std::size_t>(x.dim(0)), N = static_cast<std::size_t>(x.dim(1));
    return detail::normalize_groups(x, B, N, [N](std::size_t g, std::size_t i) { return g * N + i; }, eps);
}

/// Per-bin L2 normalisation over the channel axis of x[B,C,H,W].
inline Tensor normalize_channels(const Tensor& x, double eps = 1e-12) {
    detail::want_rank(x, 4, "normalize_channels");
    const std::size_t C = static_cast<std::size_t>(x.dim(1));
    const std::size_t P = static_cast<std::size_t>(x.dim(2)) * static_cast<std::size_t>(x.dim(3));
    const std::size_t B = static_cast<std::size_t>(x.dim(0));
    return detail::normalize_groups(
        x, B * P, C, [C, P](std::size_t g, std::size_t i) { return ((g / P) * C + i) * P + g % P; }, eps);
}

// ---- losses ----------------------------------------------------------------

/// Mean over rows of -log softmax(logits[r])[target[r]].
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& target) {
    detail::want_rank(logits, 2, "softmax_cross_entropy");
    const int R = logits.dim(0), K = logits.dim(1);
    if (target.size() != static_cast<std::size_t>(R))
        throw ShapeError("softmax_cross_entropy: " + std::to_string(target.size()) + " targets for logits " +
                         shape_str(logits.shape()));
    std::vector<double> prob(logits.size());
    double loss = 0;
    for (int r = 0; r < R; ++r) {
        if (target[r] < 0 || target[r] >= K) throw ShapeError("softmax_cross_entropy: target out of range");
        const double* z = logits.values().data() + static_cast<std::size_t>(r) * K;
        double mx = *std::max_element(z, z + K);
        double s = 0;
        for (int j = 0; j < K; ++j) s += std::exp(z[j] - mx);
        double lse = mx + std::log(s);
        loss += lse - z[target[r]];
        for (int j = 0; j < K; ++j) prob[static_cast<std::size_t>(r) * K + j] = std::exp(z[j] - lse);
    }
    loss /= R;
    return make_result({1}, {loss}, {logits}, [prob = std::move(prob), target, R, K](Node& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        const double s = self.grad[0] / R;
        for (int r = 0; r < R; ++r)
            for (int j = 0; j < K; ++j) {
                std::size_t i = static_cast<std::size_t>(r) * K + j;
                (*g)[i] += s * (prob[i] - (j == target[r] ? 1.0 : 0.0));
            }
    });
}

inline Tensor mse(const Tensor& pred, const Tensor& target) {
    Tensor d = sub(pred, target);
    return mean(mul(d, d));
}

// ---- parameters and optimisers --------------------------------------------

/// Ordered, named collection of trainable leaves.
class ParamSet {
public:
    Tensor& add(const std::string& name, Shape shape, std::vector<double> values) {
        for (const auto& n : names_)
            if (n == name) throw ConfigError("param: duplicate name '" + name + "'");
        names_.push_back(name);
        tensors_.push_back(Tensor::parameter(std::move(shape), std::move(values)));
        return tensors_.back();
    }
    /// He-uniform initialisation with the given fan-in; biases start at zero.
    Tensor& add_init(const std::string& name, Shape shape, int fan_in, std::mt19937_64& rng) {
        double bound = std::sqrt(6.0 / std::max(1, fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        std::vector<double> v(numel(shape));
        for (auto& x : v) x = u(rng);
        return add(name, std::move(shape), std::move(v));
    }
    Tensor& add_zeros(const std::string& name, Shape shape) {
        auto n = numel(shape);
        return add(name, std::move(shape), std::vector<double>(n, 0.0));
    }

    const Tensor& get(const std::string& name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return tensors_[i];
        throw NotFoundError("param: no parameter named '" + name + "'");
    }
    Tensor& operator[](std::size_t i) { return tensors_.at(i); }
    const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    std::size_t size() const { return tensors_.size(); }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }
    void zero_grad() {
        for (auto& t : tensors_) t.zero_grad();
    }
    /// Deep copy with fresh leaves (gradients zeroed).
    ParamSet clone() const {
        ParamSet p;
        for (std::size_t i = 0; i < size(); ++i) p.add(names_[i], tensors_[i].shape(), tensors_[i].values());
        return p;
    }
    /// Append another set's leaves, sharing storage, with a name prefix.
    void extend(const ParamSet& other, const std::string& prefix = "") {
        for (std::size_t i = 0; i < other.size(); ++i) {
            names_.push_back(prefix + other.names_[i]);
            tensors_.push_back(other.tensors_[i]);
        }
    }

private:
    std::vector<std::string> names_;
    std::deque<Tensor> tensors_;  // stable references across add()
};

namespace detail {
inline void check_finite_grads(const ParamSet& ps, const char* who) {
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (double g : ps[i].grad())
            if (!std::isfinite(g))
                throw NumericError(std::string(who) + ": non-finite gradient in parameter '" + ps.name(i) + "'");
}
}  // namespace detail

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(const ParamSet& ps, AdamConfig cfg = {}) : cfg_(cfg) {
        require(cfg.lr > 0, "adam.lr", "must be positive");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m_.emplace_back(ps[i].size(), 0.0);
            v_.emplace_back(ps[i].size(), 0.0);
        }
    }

    void step(ParamSet& ps) {
        if (ps.size() != m_.size()) throw ShapeError("adam: parameter set changed size");
        detail::check_finite_grads(ps, "adam");
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto& p = ps[i].mutable_values();
            const auto& g = ps[i].grad();
            if (p.size() != m_[i].size()) throw ShapeError("adam: moment shape mismatch for '" + ps.name(i) + "'");
            for (std::size_t j = 0; j < p.size(); ++j) {
                double gj = g.empty() ? 0.0 : g[j];
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * gj;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * gj * gj;
                p[j] -= cfg_.lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + cfg_.eps);
            }
        }
    }

    int steps() const { return t_; }

private:
    AdamConfig cfg_;
    int t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// SGD with heavy-ball momentum (v <- mu v + g; p <- p - lr v).
class SgdMomentum {
public:
    SgdMomentum(const ParamSet& ps, double lr, double momentum = 0.9489) : lr_(lr), mu_(momentum) {
        require(lr > 0, "sgd.lr", "must be positive");
        require(momentum >= 0 && momentum < 1, "sgd.momentum", "must be in [0,1)");
        for (std::size_t i = 0; i < ps.size(); ++i) vel_.emplace_back(ps[i].size(), 0.0);
    }
    void step(ParamSet& ps) {
        detail::check_finite_grads(ps, "sgd");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto& p = ps[i].mutable_values();
            const auto& g = ps[i].grad();
            for (std::size_t j = 0; j < p.size(); ++j) {
                vel_[i][j] = mu_ * vel_[i][j] + (g.empty() ? 0.0 : g[j]);
                p[j] -= lr_ * vel_[i][j];
            }
        }
    }

private:
    double lr_, mu_;
    std::vector<std::vector<double>> vel_;
};

// ---- checkpoints -----------------------------------------------------------

/// One RVHM file per parameter plus params.json listing names and shapes (float32 storage).
inline void save_params(const ParamSet& ps, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = nlohmann::json::array();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        rvhm::Array a;
        for (int d : ps[i].shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
        a.values.assign(ps[i].values().begin(), ps[i].values().end());
        std::string file = ps.name(i) + ".rvhm";
        rvhm::write_file(dir / file, a);
        manifest.push_back({{"name", ps.name(i)}, {"shape", ps[i].shape()}, {"file", file}});
    }
    std::ofstream(dir / "params.json") << manifest.dump(2) << "\n";
}

/// Load into an already-built set; names and shapes must match.
inline void load_params(ParamSet& ps, const std::filesystem::path& dir) {
    std::ifstream in(dir / "params.json");
    if (!in) throw NotFoundError("checkpoint: missing " + (dir / "params.json").string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    if (manifest.size() != ps.size())
        throw ConsistencyError("checkpoint: " + std::to_string(manifest.size()) + " parameters on disk, model has " +
                               std::to_string(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& e = manifest[i];
        if (e.at("name").get<std::string>() != ps.name(i))
            throw ConsistencyError("checkpoint: expected parameter '" + ps.name(i) + "', found '" +
                                   e.at("name").get<std::string>() + "'");
        rvhm::Array a = rvhm::read_file(dir / e.at("file").get<std::string>(), ps.name(i));
        Shape s(a.dims.begin(), a.dims.end());
        if (s != ps[i].shape())
            throw ConsistencyError("checkpoint: parameter '" + ps.name(i) + "' has shape " + shape_str(s) +
                                   ", model expects " + shape_str(ps[i].shape()));
        auto& v = ps[i].mutable_values();
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = a.values[j];
    }
}

}  // namespace rvl::ad

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "metatrack/tensor.hpp"

namespace metatrack {

class Var;

namespace detail {

using BackwardFn = std::function<std::vector<Var>(
    const std::vector<Var>& inputs, const Var& self, const Var& grad_out)>;

struct Node {
    Tensor value;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;        // empty for leaves and constants
    bool requires_grad = false;

    Node() = default;
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;
    ~Node();
};

// Deep graphs (unrolled training loops) would otherwise blow the stack via
// recursive shared_ptr teardown; drain children iteratively instead.
inline thread_local std::vector<std::shared_ptr<Node>>* node_drain = nullptr;

inline Node::~Node() {
    if (node_drain) {
        for (auto& in : inputs) node_drain->push_back(std::move(in));
        return;
    }
    std::vector<std::shared_ptr<Node>> pending;
    node_drain = &pending;
    for (auto& in : inputs) pending.push_back(std::move(in));
    while (!pending.empty()) {
        auto p = std::move(pending.back());
        pending.pop_back();
    }
    node_drain = nullptr;
}

} // namespace detail

// Handle to a node of the computation graph. Values are computed eagerly at
// construction; gradients are built as new graph nodes, so results of
// gradient() can themselves be differentiated (double backward).
class Var {
public:
    Var() = default;

    const Tensor& value() const { return node_->value; }
    const std::vector<int64_t>& shape() const { return node_->value.shape(); }
    int64_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return node_ != nullptr; }
    double item() const { return node_->value.item(); }

    // Mutates a leaf's stored tensor in place. Only meaningful for leaves that
    // are re-bound between graph builds (e.g. trainable parameters between
    // outer iterations); nodes computed from it are not re-evaluated.
    void bind(Tensor t) {
        if (node_->backward)
            throw std::logic_error("bind: only leaf tensors can be re-bound");
        if (!(t.shape() == node_->value.shape()))
            throw std::invalid_argument("bind: shape mismatch");
        node_->value = std::move(t);
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

    static Var from_node(std::shared_ptr<detail::Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

inline Var make_leaf(Tensor value, bool trainable = true) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->requires_grad = trainable;
    return Var::from_node(std::move(n));
}

inline Var make_constant(Tensor value) { return make_leaf(std::move(value), false); }

inline Var make_scalar(double v) { return make_constant(Tensor::scalar(v)); }

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    n->inputs.reserve(inputs.size());
    for (auto& v : inputs) {
        rg = rg || v.requires_grad();
        n->inputs.push_back(v.node());
    }
    n->requires_grad = rg;
    n->backward = rg ? std::move(backward) : BackwardFn{};
    return Var::from_node(std::move(n));
}

inline std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                            const std::vector<int64_t>& b) {
    const size_t ra = a.size(), rb = b.size();
    const size_t r = std::max(ra, rb);
    std::vector<int64_t> out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " +
                                        Tensor::shape_str(a) + " vs " + Tensor::shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides, with zero stride on broadcast (size-1) axes relative to `to`.
inline std::vector<int64_t> broadcast_strides(const std::vector<int64_t>& from,
                                              const std::vector<int64_t>& to) {
    const size_t r = to.size(), rf = from.size();
    std::vector<int64_t> strides(r, 0);
    int64_t s = 1;
    for (size_t i = rf; i-- > 0;) {
        int64_t d = from[i];
        int64_t pos = static_cast<int64_t>(i + (r - rf));
        strides[static_cast<size_t>(pos)] = (d == 1) ? 0 : s;
        s *= d;
    }
    return strides;
}

inline Tensor broadcast_tensor(const Tensor& t, const std::vector<int64_t>& to) {
    if (t.shape() == to) return t;
    Tensor out(to);
    const auto strides = broadcast_strides(t.shape(), to);
    const size_t r = to.size();
    std::vector<int64_t> idx(r, 0);
    const double* src = t.data();
    double* dst = out.data();
    const int64_t n = out.size();
    int64_t off = 0;
    for (int64_t i = 0; i < n; ++i) {
        dst[i] = src[off];
        for (size_t d = r; d-- > 0;) {
            if (++idx[d] < to[d]) {
                off += strides[d];
                break;
            }
            idx[d] = 0;
            off -= strides[d] * (to[d] - 1);
        }
    }
    return out;
}

inline Tensor sum_tensor_to(const Tensor& t, const std::vector<int64_t>& to) {
    if (t.shape() == to) return t;
    Tensor out(to);
    const auto strides = broadcast_strides(to, t.shape());
    const size_t r = t.shape().size();
    std::vector<int64_t> idx(r, 0);
    const double* src = t.data();
    double* dst = out.data();
    const int64_t n = t.size();
    const auto& from = t.shape();
    int64_t off = 0;
    for (int64_t i = 0; i < n; ++i) {
        dst[off] += src[i];
        for (size_t d = r; d-- > 0;) {
            if (++idx[d] < from[d]) {
                off += strides[d];
                break;
            }
            idx[d] = 0;
            off -= strides[d] * (from[d] - 1);
        }
    }
    return out;
}

} // namespace detail

inline const Tensor& evaluate(const Var& v) { return v.value(); }

// ---- shape ops -------------------------------------------------------------

inline Var broadcast_to(const Var& x, std::vector<int64_t> shape);
inline Var sum_to(const Var& x, std::vector<int64_t> shape);

inline Var broadcast_to(const Var& x, std::vector<int64_t> shape) {
    if (x.shape() == shape) return x;
    Tensor out = detail::broadcast_tensor(x.value(), shape);
    std::vector<int64_t> from = x.shape();
    return detail::make_op(std::move(out), {x},
        [from](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{sum_to(g, from)};
        });
}

inline Var sum_to(const Var& x, std::vector<int64_t> shape) {
    if (x.shape() == shape) return x;
    Tensor out = detail::sum_tensor_to(x.value(), shape);
    std::vector<int64_t> from = x.shape();
    return detail::make_op(std::move(out), {x},
        [from](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{broadcast_to(g, from)};
        });
}

inline Var reshape(const Var& x, std::vector<int64_t> shape) {
    if (Tensor::shape_size(shape) != x.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(shape, x.value().values());
    std::vector<int64_t> from = x.shape();
    return detail::make_op(std::move(out), {x},
        [from](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{reshape(g, from)};
        });
}

inline Var transpose2d(const Var& x) {
    if (x.shape().size() != 2)
        throw std::invalid_argument("transpose2d: rank-2 tensor required");
    const int64_t r = x.shape()[0], c = x.shape()[1];
    Tensor out({c, r});
    const double* src = x.value().data();
    double* dst = out.data();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j)
            dst[j * r + i] = src[i * c + j];
    return detail::make_op(std::move(out), {x},
        [](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{transpose2d(g)};
        });
}

inline Var slice(const Var& x, int64_t axis, int64_t start, int64_t len);

inline Var concat(const std::vector<Var>& parts, int64_t axis) {
    if (parts.empty())
        throw std::invalid_argument("concat: no operands");
    const auto& s0 = parts[0].shape();
    const size_t r = s0.size();
    if (axis < 0 || static_cast<size_t>(axis) >= r)
        throw std::invalid_argument("concat: axis out of range");
    std::vector<int64_t> out_shape = s0;
    int64_t total = s0[static_cast<size_t>(axis)];
    for (size_t p = 1; p < parts.size(); ++p) {
        const auto& s = parts[p].shape();
        if (s.size() != r)
            throw std::invalid_argument("concat: rank mismatch");
        for (size_t d = 0; d < r; ++d)
            if (d != static_cast<size_t>(axis) && s[d] != s0[d])
                throw std::invalid_argument("concat: shape mismatch off-axis");
        total += s[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total;

    int64_t outer = 1, inner = 1;
    for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= s0[d];
    for (size_t d = static_cast<size_t>(axis) + 1; d < r; ++d) inner *= s0[d];

    Tensor out(out_shape);
    double* dst = out.data();
    const int64_t out_row = total * inner;
    int64_t offset = 0;
    std::vector<int64_t> lens(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) {
        const int64_t ap = parts[p].shape()[static_cast<size_t>(axis)];
        lens[p] = ap;
        const double* src = parts[p].value().data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(src + o * ap * inner, src + (o + 1) * ap * inner,
                      dst + o * out_row + offset * inner);
        offset += ap;
    }
    return detail::make_op(std::move(out), parts,
        [axis, lens](const std::vector<Var>&, const Var&, const Var& g) {
            std::vector<Var> gs;
            gs.reserve(lens.size());
            int64_t at = 0;
            for (int64_t len : lens) {
                gs.push_back(slice(g, axis, at, len));
                at += len;
            }
            return gs;
        });
}

inline Var slice(const Var& x, int64_t axis, int64_t start, int64_t len) {
    const auto& s = x.shape();
    const size_t r = s.size();
    if (axis < 0 || static_cast<size_t>(axis) >= r)
        throw std::invalid_argument("slice: axis out of range");
    const int64_t extent = s[static_cast<size_t>(axis)];
    if (start < 0 || len < 0 || start + len > extent)
        throw std::invalid_argument("slice: bounds exceed extent");

    int64_t outer = 1, inner = 1;
    for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= s[d];
    for (size_t d = static_cast<size_t>(axis) + 1; d < r; ++d) inner *= s[d];

    std::vector<int64_t> out_shape = s;
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor out(out_shape);
    const double* src = x.value().data();
    double* dst = out.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(src + (o * extent + start) * inner,
                  src + (o * extent + start + len) * inner,
                  dst + o * len * inner);

    return detail::make_op(std::move(out), {x},
        [axis, start, len, extent](const std::vector<Var>&, const Var&, const Var& g) {
            // Gradient of a slice scatters back into a zero field.
            std::vector<Var> pieces;
            if (start > 0) {
                auto zshape = g.shape();
                zshape[static_cast<size_t>(axis)] = start;
                pieces.push_back(make_constant(Tensor(zshape)));
            }
            pieces.push_back(g);
            if (start + len < extent) {
                auto zshape = g.shape();
                zshape[static_cast<size_t>(axis)] = extent - start - len;
                pieces.push_back(make_constant(Tensor(zshape)));
            }
            return std::vector<Var>{pieces.size() == 1 ? pieces[0] : concat(pieces, axis)};
        });
}

inline Var detach(const Var& x) { return make_constant(x.value()); }

// ---- elementwise arithmetic -------------------------------------------------

namespace detail {

enum class BinOp { Add, Sub, Mul, Div };

inline Tensor apply_bin(const Tensor& a, const Tensor& b, BinOp op) {
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const int64_t n = a.size();
    switch (op) {
        case BinOp::Add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
        case BinOp::Sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
        case BinOp::Mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
        case BinOp::Div: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
    }
    return out;
}

} // namespace detail

inline Var operator*(const Var& a, const Var& b);
inline Var operator/(const Var& a, const Var& b);

inline Var scale(const Var& x, double c) {
    Tensor out(x.shape());
    const double* src = x.value().data();
    double* dst = out.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) dst[i] = src[i] * c;
    return detail::make_op(std::move(out), {x},
        [c](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{scale(g, c)};
        });
}

inline Var operator+(const Var& a, const Var& b) {
    auto shape = detail::broadcast_shape(a.shape(), b.shape());
    Var ba = broadcast_to(a, shape), bb = broadcast_to(b, shape);
    Tensor out = detail::apply_bin(ba.value(), bb.value(), detail::BinOp::Add);
    return detail::make_op(std::move(out), {ba, bb},
        [](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{g, g};
        });
}

inline Var operator-(const Var& a, const Var& b) {
    auto shape = detail::broadcast_shape(a.shape(), b.shape());
    Var ba = broadcast_to(a, shape), bb = broadcast_to(b, shape);
    Tensor out = detail::apply_bin(ba.value(), bb.value(), detail::BinOp::Sub);
    return detail::make_op(std::move(out), {ba, bb},
        [](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{g, scale(g, -1.0)};
        });
}

inline Var operator*(const Var& a, const Var& b) {
    auto shape = detail::broadcast_shape(a.shape(), b.shape());
    Var ba = broadcast_to(a, shape), bb = broadcast_to(b, shape);
    Tensor out = detail::apply_bin(ba.value(), bb.value(), detail::BinOp::Mul);
    return detail::make_op(std::move(out), {ba, bb},
        [](const std::vector<Var>& in, const Var&, const Var& g) {
            return std::vector<Var>{g * in[1], g * in[0]};
        });
}

inline Var square(const Var& x);

inline Var operator/(const Var& a, const Var& b) {
    auto shape = detail::broadcast_shape(a.shape(), b.shape());
    Var ba = broadcast_to(a, shape), bb = broadcast_to(b, shape);
    Tensor out = detail::apply_bin(ba.value(), bb.value(), detail::BinOp::Div);
    return detail::make_op(std::move(out), {ba, bb},
        [](const std::vector<Var>& in, const Var& self, const Var& g) {
            Var ga = g / in[1];
            Var gb = scale(g * self / in[1], -1.0); // -g * a / b^2, reusing a/b
            return std::vector<Var>{ga, gb};
        });
}

inline Var operator+(const Var& a, double b) { return a + make_scalar(b); }
inline Var operator+(double a, const Var& b) { return make_scalar(a) + b; }
inline Var operator-(const Var& a, double b) { return a - make_scalar(b); }
inline Var operator-(double a, const Var& b) { return make_scalar(a) - b; }
inline Var operator*(const Var& a, double b) { return scale(a, b); }
inline Var operator*(double a, const Var& b) { return scale(b, a); }
inline Var operator/(const Var& a, double b) { return scale(a, 1.0 / b); }
inline Var operator/(double a, const Var& b) { return make_scalar(a) / b; }

// ---- elementwise functions ---------------------------------------------------

namespace detail {

template <typename F>
Tensor map_tensor(const Tensor& x, F f) {
    Tensor out(x.shape());
    const double* src = x.data();
    double* dst = out.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) dst[i] = f(src[i]);
    return out;
}

} // namespace detail

inline Var sigmoid(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
    });
    return detail::make_op(std::move(out), {x},
        [](const std::vector<Var>&, const Var& self, const Var& g) {
            return std::vector<Var>{g * self * (1.0 - self)};
        });
}

inline Var vtanh(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) { return std::tanh(v); });
    return detail::make_op(std::move(out), {x},
        [](const std::vector<Var>&, const Var& self, const Var& g) {
            return std::vector<Var>{g * (1.0 - square(self))};
        });
}

inline Var vexp(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) { return std::exp(v); });
    return detail::make_op(std::move(out), {x},
        [](const std::vector<Var>&, const Var& self, const Var& g) {
            return std::vector<Var>{g * self};
        });
}

inline Var square(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) { return v * v; });
    return detail::make_op(std::move(out), {x},
        [](const std::vector<Var>& in, const Var&, const Var& g) {
            return std::vector<Var>{scale(g * in[0], 2.0)};
        });
}

// Derivative is zero almost everywhere; gradient stops here.
inline Var vsign(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) {
        return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
    });
    return make_constant(std::move(out));
}

// Indicator of |x| < 1; zero-derivative step function.
inline Var unit_band(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) {
        return std::fabs(v) < 1.0 ? 1.0 : 0.0;
    });
    return make_constant(std::move(out));
}

inline Var vabs(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) { return std::fabs(v); });
    return detail::make_op(std::move(out), {x},
        [](const std::vector<Var>& in, const Var&, const Var& g) {
            return std::vector<Var>{g * vsign(in[0])};
        });
}

inline Var smooth_l1_deriv(const Var& x);

// Huber-style loss: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
inline Var smooth_l1(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) {
        double a = std::fabs(v);
        return a < 1.0 ? 0.5 * v * v : a - 0.5;
    });
    return detail::make_op(std::move(out), {x},
        [](const std::vector<Var>& in, const Var&, const Var& g) {
            return std::vector<Var>{g * smooth_l1_deriv(in[0])};
        });
}

inline Var smooth_l1_deriv(const Var& x) {
    Tensor out = detail::map_tensor(x.value(), [](double v) {
        return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v);
    });
    return detail::make_op(std::move(out), {x},
        [](const std::vector<Var>& in, const Var&, const Var& g) {
            return std::vector<Var>{g * unit_band(in[0])};
        });
}

// ---- reductions ---------------------------------------------------------------

inline Var sum_all(const Var& x) {
    double acc = 0.0;
    const double* src = x.value().data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) acc += src[i];
    std::vector<int64_t> from = x.shape();
    return detail::make_op(Tensor::scalar(acc), {x},
        [from](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{broadcast_to(g, from)};
        });
}

inline Var mean_all(const Var& x) {
    if (x.size() == 0)
        throw std::invalid_argument("mean_all: empty tensor");
    return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---- gradient ------------------------------------------------------------------

struct GradientResult {
    std::vector<Var> grads;      // one per param, zero tensor when unreachable
    std::vector<bool> reachable; // false when param does not influence the loss
};

inline GradientResult gradient_detailed(const Var& loss, const std::vector<Var>& params,
                                        bool allow_intermediate = false) {
    if (!loss.defined() || !loss.value().is_scalar())
        throw std::invalid_argument("gradient: loss must be a scalar");
    if (!allow_intermediate)
        for (const auto& p : params)
            if (!p.node()->inputs.empty() || p.node()->backward)
                throw std::invalid_argument("gradient: params must be leaf tensors");

    // Reverse post-order over the requires_grad subgraph.
    std::vector<std::shared_ptr<detail::Node>> topo;
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        std::shared_ptr<detail::Node> n;
        size_t next = 0;
    };
    std::vector<Frame> stack;
    if (loss.requires_grad()) {
        stack.push_back({loss.node()});
        visited.insert(loss.node().get());
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->inputs.size()) {
            auto& child = f.n->inputs[f.next++];
            if (child->requires_grad && visited.insert(child.get()).second)
                stack.push_back({child});
        } else {
            topo.push_back(f.n);
            stack.pop_back();
        }
    }

    std::unordered_map<detail::Node*, Var> grad_of;
    if (!topo.empty())
        grad_of[loss.node().get()] = make_scalar(1.0);

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::Node* n = it->get();
        auto found = grad_of.find(n);
        if (found == grad_of.end() || !n->backward) continue;
        std::vector<Var> ins;
        ins.reserve(n->inputs.size());
        for (auto& in : n->inputs) ins.push_back(Var::from_node(in));
        Var self = Var::from_node(*it);
        std::vector<Var> gs = n->backward(ins, self, found->second);
        if (gs.size() != n->inputs.size())
            throw std::logic_error("gradient: backward arity mismatch");
        for (size_t i = 0; i < gs.size(); ++i) {
            detail::Node* dst = n->inputs[i].get();
            if (!dst->requires_grad || !gs[i].defined()) continue;
            auto slot = grad_of.find(dst);
            if (slot == grad_of.end())
                grad_of.emplace(dst, gs[i]);
            else
                slot->second = slot->second + gs[i];
        }
    }

    GradientResult result;
    result.grads.reserve(params.size());
    result.reachable.reserve(params.size());
    for (const auto& p : params) {
        auto found = grad_of.find(p.node().get());
        if (found == grad_of.end()) {
            result.grads.push_back(make_constant(Tensor(p.shape())));
            result.reachable.push_back(false);
        } else {
            result.grads.push_back(found->second);
            result.reachable.push_back(true);
        }
    }
    return result;
}

inline std::vector<Var> gradient(const Var& loss, const std::vector<Var>& params) {
    return gradient_detailed(loss, params).grads;
}

// Same as gradient() but the differentiation targets may be interior graph
// nodes; the adjoint of an interior node treats that node as an independent
// variable while staying connected to its ancestors, which is what an
// unrolled inner update needs.
inline std::vector<Var> gradient_wrt(const Var& loss, const std::vector<Var>& params) {
    return gradient_detailed(loss, params, true).grads;
}

// Central-difference oracle, element-wise over every parameter tensor.
inline std::vector<Tensor> finite_difference(
    const std::function<double(const std::vector<Tensor>&)>& loss_fn,
    std::vector<Tensor> params, double epsilon) {
    if (!(epsilon > 0))
        throw std::invalid_argument("finite_difference: epsilon must be positive");
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor g(params[p].shape());
        for (int64_t i = 0; i < params[p].size(); ++i) {
            const double saved = params[p][i];
            params[p][i] = saved + epsilon;
            const double hi = loss_fn(params);
            params[p][i] = saved - epsilon;
            const double lo = loss_fn(params);
            params[p][i] = saved;
            g[i] = (hi - lo) / (2.0 * epsilon);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

} // namespace metatrack

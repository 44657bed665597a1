#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "metatrack/autodiff.hpp"
#include "metatrack/image_ops.hpp"
#include "metatrack/rng.hpp"

namespace metatrack {

// Two stacked LSTM layers plus a linear head, applied independently to every
// parameter coordinate with shared weights. Implemented with 1x1
// correlations over a [channels, 1, coords] layout, so the whole coordinate
// batch advances in one graph op.
struct OptimizerParams {
    Var wx1;     // [4H, 4, 1, 1]
    Var wh1;     // [4H, H, 1, 1]
    Var b1;      // [4H]
    Var wx2;     // [4H, H, 1, 1]
    Var wh2;     // [4H, H, 1, 1]
    Var b2;      // [4H]
    Var proj_w;  // [1, H, 1, 1]
    Var proj_b;  // [1]
    int64_t hidden = 20;

    std::vector<Var> all() const { return {wx1, wh1, b1, wx2, wh2, b2, proj_w, proj_b}; }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& v : all()) n += v.size();
        return n;
    }
};

// Seeded uniform init. The head bias starts at head_bias so the first
// predicted rates are sigmoid(head_bias); strongly negative values give the
// meta-training a gentle, non-divergent starting policy.
inline OptimizerParams make_optimizer(int64_t hidden, Rng& rng, double head_bias = -4.0) {
    if (hidden < 1)
        throw std::invalid_argument("make_optimizer: positive hidden size required");
    auto bank = [&rng](std::vector<int64_t> shape, double fan_in) {
        Tensor t(shape);
        const double bound = 1.0 / std::sqrt(fan_in);
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
        return make_leaf(std::move(t));
    };
    OptimizerParams p;
    p.hidden = hidden;
    p.wx1 = bank({4 * hidden, 4, 1, 1}, 4.0);
    p.wh1 = bank({4 * hidden, hidden, 1, 1}, static_cast<double>(hidden));
    p.b1 = make_leaf(Tensor({4 * hidden}));
    p.wx2 = bank({4 * hidden, hidden, 1, 1}, static_cast<double>(hidden));
    p.wh2 = bank({4 * hidden, hidden, 1, 1}, static_cast<double>(hidden));
    p.b2 = make_leaf(Tensor({4 * hidden}));
    p.proj_w = bank({1, hidden, 1, 1}, static_cast<double>(hidden));
    p.proj_b = make_leaf(Tensor({1}, {head_bias}));
    return p;
}

// Recurrent state for one tracked model: hidden/cell pairs for both layers
// and the most recent learning rates. Fields are graph nodes so that
// unrolled meta-training can differentiate through time; online code stores
// detached values between events.
struct OptimizerState {
    Var h1, c1, h2, c2;  // [H, 1, coords]
    Var lambda_prev;     // [coords], in (0,1)
    int64_t coords = 0;
};

inline OptimizerState init_state(int64_t coords, const Var& lambda0, int64_t hidden) {
    if (lambda0.size() != coords)
        throw std::invalid_argument("init_state: initial rate count mismatch");
    OptimizerState s;
    s.coords = coords;
    Tensor zeros({hidden, 1, coords});
    s.h1 = make_constant(zeros);
    s.c1 = make_constant(zeros);
    s.h2 = make_constant(zeros);
    s.c2 = make_constant(zeros);
    s.lambda_prev = lambda0;
    return s;
}

// [coords, 4] stack with column order (previous rate, gradient, parameter,
// loss); the scalar loss is broadcast down its column.
inline Var stack_inputs(const OptimizerState& state, const Var& grad, const Var& theta,
                        const Var& loss) {
    const int64_t n = state.coords;
    if (grad.size() != n || theta.size() != n)
        throw std::invalid_argument("stack_inputs: coordinate count mismatch");
    if (!loss.value().is_scalar())
        throw std::invalid_argument("stack_inputs: loss must be a scalar");
    Var col_lambda = reshape(state.lambda_prev, {n, 1});
    Var col_grad = reshape(grad, {n, 1});
    Var col_theta = reshape(theta, {n, 1});
    Var col_loss = broadcast_to(reshape(loss, {1, 1}), {n, 1});
    return concat({col_lambda, col_grad, col_theta, col_loss}, 1);
}

namespace detail {

inline std::pair<Var, Var> lstm_step(const Var& x, const Var& wx, const Var& wh,
                                     const Var& b, const Var& h, const Var& c,
                                     int64_t hidden) {
    Var z = correlate2d(x, wx, 0, 0) + correlate2d(h, wh, 0, 0) +
            reshape(b, {4 * hidden, 1, 1});
    Var gi = sigmoid(slice(z, 0, 0, hidden));
    Var gf = sigmoid(slice(z, 0, hidden, hidden));
    Var gg = vtanh(slice(z, 0, 2 * hidden, hidden));
    Var go = sigmoid(slice(z, 0, 3 * hidden, hidden));
    Var c2 = gf * c + gi * gg;
    Var h2 = go * vtanh(c2);
    return {h2, c2};
}

} // namespace detail

// One recurrent step over all coordinates; returns rates in (0,1) and the
// advanced state. Differentiable with respect to the optimizer parameters,
// the inputs, and the incoming state.
inline std::pair<Var, OptimizerState> predict_learning_rates(const Var& inputs,
                                                             const OptimizerParams& w,
                                                             const OptimizerState& state) {
    if (inputs.shape().size() != 2 || inputs.shape()[1] != 4 ||
        inputs.shape()[0] != state.coords)
        throw std::invalid_argument("predict_learning_rates: [coords,4] input stack required");
    if (!inputs.value().all_finite())
        throw std::invalid_argument("predict_learning_rates: non-finite inputs");
    const int64_t n = state.coords, H = w.hidden;

    Var x = reshape(transpose2d(inputs), {4, 1, n});
    auto [h1, c1] = detail::lstm_step(x, w.wx1, w.wh1, w.b1, state.h1, state.c1, H);
    auto [h2, c2] = detail::lstm_step(h1, w.wx2, w.wh2, w.b2, state.h2, state.c2, H);
    Var logits = correlate2d(h2, w.proj_w, 0, 0) + reshape(w.proj_b, {1, 1, 1});
    Var lambda = sigmoid(reshape(logits, {n}));

    OptimizerState next;
    next.coords = n;
    next.h1 = h1;
    next.c1 = c1;
    next.h2 = h2;
    next.c2 = c2;
    next.lambda_prev = lambda;
    return {lambda, next};
}

inline Var apply_update(const Var& theta, const Var& lambda, const Var& grad) {
    if (!(theta.shape() == lambda.shape()) || !(theta.shape() == grad.shape()))
        throw std::invalid_argument("apply_update: shape mismatch");
    return theta - lambda * grad;
}

} // namespace metatrack

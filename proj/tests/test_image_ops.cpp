#include <catch2/catch_amalgamated.hpp>

#include "metatrack/image_ops.hpp"
#include "metatrack/rng.hpp"
#include "support/fuzz_graphs.hpp"

using namespace metatrack;

namespace {

// Definition-level oracle: six nested loops, explicit zero padding.
Tensor brute_correlate(const Tensor& in, const Tensor& k, int64_t py, int64_t px) {
    const int64_t Ci = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int64_t Co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const int64_t Ho = H + 2 * py - kh + 1, Wo = W + 2 * px - kw + 1;
    Tensor out({Co, Ho, Wo});
    for (int64_t co = 0; co < Co; ++co)
        for (int64_t y = 0; y < Ho; ++y)
            for (int64_t x = 0; x < Wo; ++x) {
                double acc = 0.0;
                for (int64_t ci = 0; ci < Ci; ++ci)
                    for (int64_t u = 0; u < kh; ++u)
                        for (int64_t v = 0; v < kw; ++v) {
                            const int64_t sy = y + u - py, sx = x + v - px;
                            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                            acc += in[(ci * H + sy) * W + sx] *
                                   k[((co * Ci + ci) * kh + u) * kw + v];
                        }
                out[(co * Ho + y) * Wo + x] = acc;
            }
    return out;
}

// Independent per-pixel bilinear oracle (align-corners).
Tensor brute_bilinear(const Tensor& x, int64_t oh, int64_t ow) {
    const size_t r = x.shape().size();
    const int64_t H = x.shape()[r - 2], W = x.shape()[r - 1];
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < r; ++i) batch *= x.shape()[i];
    auto out_shape = x.shape();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    Tensor out(out_shape);
    auto src_pos = [](int64_t i, int64_t n_in, int64_t n_out) {
        if (n_out == 1) return (static_cast<double>(n_in) - 1.0) / 2.0;
        return static_cast<double>(i) * (static_cast<double>(n_in) - 1.0) /
               (static_cast<double>(n_out) - 1.0);
    };
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t y = 0; y < oh; ++y)
            for (int64_t xx = 0; xx < ow; ++xx) {
                const double sy = src_pos(y, H, oh), sx = src_pos(xx, W, ow);
                int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(sy)),
                                               H - 2);
                int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(sx)),
                                               W - 2);
                y0 = std::max<int64_t>(y0, 0);
                x0 = std::max<int64_t>(x0, 0);
                const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                const double fy = H == 1 ? 0.0 : sy - static_cast<double>(y0);
                const double fx = W == 1 ? 0.0 : sx - static_cast<double>(x0);
                const double* p = x.data() + b * H * W;
                const double val =
                    p[y0 * W + x0] * (1 - fy) * (1 - fx) + p[y0 * W + x1] * (1 - fy) * fx +
                    p[y1 * W + x0] * fy * (1 - fx) + p[y1 * W + x1] * fy * fx;
                out[(b * oh + y) * ow + xx] = val;
            }
    return out;
}

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

} // namespace

TEST_CASE("correlation matches the brute-force definition") {
    Rng rng(31);
    const struct { int64_t ci, h, w, co, kh, kw, py, px; } cases[] = {
        {1, 5, 5, 1, 3, 3, 1, 1},  // same padding
        {2, 6, 7, 3, 3, 5, 1, 2},
        {3, 4, 4, 2, 1, 1, 0, 0},  // pointwise
        {1, 8, 8, 1, 5, 5, 0, 0},  // valid
        {2, 5, 6, 2, 3, 3, 2, 2},  // padding beyond same
        {1, 1, 9, 1, 1, 3, 0, 1},  // single-row signal
    };
    for (const auto& c : cases) {
        Tensor in = random_tensor({c.ci, c.h, c.w}, rng);
        Tensor k = random_tensor({c.co, c.ci, c.kh, c.kw}, rng);
        Tensor got = detail::corr2d_fwd(in, k, c.py, c.px);
        Tensor want = brute_correlate(in, k, c.py, c.px);
        REQUIRE(got.shape() == want.shape());
        for (int64_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == Catch::Approx(want[i]).margin(1e-10));
    }
}

TEST_CASE("correlation validates its arguments") {
    Rng rng(5);
    Tensor in = random_tensor({2, 4, 4}, rng);
    Tensor k = random_tensor({1, 3, 3, 3}, rng); // channel mismatch
    CHECK_THROWS_AS(detail::corr2d_fwd(in, k, 1, 1), std::invalid_argument);
    Tensor k2 = random_tensor({1, 2, 7, 7}, rng); // larger than padded input
    CHECK_THROWS_AS(detail::corr2d_fwd(in, k2, 0, 0), std::invalid_argument);
    Tensor k3 = random_tensor({1, 2, 3, 3}, rng);
    CHECK_THROWS_AS(detail::corr2d_fwd(in, k3, -1, 0), std::invalid_argument);
}

TEST_CASE("correlation gradients match finite differences") {
    Rng rng(77);
    Tensor tin = random_tensor({2, 5, 5}, rng);
    Tensor tk = random_tensor({2, 2, 3, 3}, rng);
    Var in = make_leaf(tin), k = make_leaf(tk);
    Var loss = mean_all(square(correlate2d(in, k, 1, 1)));
    auto g = gradient(loss, {in, k});
    auto fd = finite_difference(
        [](const std::vector<Tensor>& ts) {
            Var a = make_leaf(ts[0], false), b = make_leaf(ts[1], false);
            return mean_all(square(correlate2d(a, b, 1, 1))).item();
        },
        {tin, tk}, 1e-6);
    for (int64_t i = 0; i < tin.size(); ++i)
        CHECK(fuzz::mixed_rel_err(g[0].value()[i], fd[0][i]) < 1e-6);
    for (int64_t i = 0; i < tk.size(); ++i)
        CHECK(fuzz::mixed_rel_err(g[1].value()[i], fd[1][i]) < 1e-6);
}

TEST_CASE("correlation supports second-order differentiation") {
    Rng rng(78);
    Tensor tin = random_tensor({1, 4, 4}, rng);
    Tensor tk = random_tensor({1, 1, 3, 3}, rng);
    Tensor dir = random_tensor({1, 1, 3, 3}, rng);

    Var in = make_leaf(tin, false), k = make_leaf(tk);
    Var loss = mean_all(square(correlate2d(in, k, 1, 1)));
    auto g = gradient(loss, {k});
    Var s = sum_all(g[0] * make_constant(dir));
    auto hv = gradient(s, {k});

    const double eps = 1e-5;
    auto grad_at = [&](double sgn) {
        Tensor shifted = tk;
        for (int64_t i = 0; i < shifted.size(); ++i) shifted[i] += sgn * eps * dir[i];
        Var kk = make_leaf(shifted);
        Var l = mean_all(square(correlate2d(make_leaf(tin, false), kk, 1, 1)));
        return gradient(l, {kk})[0].value();
    };
    Tensor gp = grad_at(1.0), gm = grad_at(-1.0);
    for (int64_t i = 0; i < tk.size(); ++i) {
        const double fd = (gp[i] - gm[i]) / (2 * eps);
        CHECK(fuzz::mixed_rel_err(hv[0].value()[i], fd) < 1e-5);
    }
}

TEST_CASE("kernel-gradient op matches brute force") {
    Rng rng(91);
    Tensor in = random_tensor({2, 5, 6}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    Tensor g = random_tensor({3, 5, 6}, rng); // same-padding output extent

    // d/dk of sum(corr * g) equals corr_kernel_grad(in, g).
    Var vin = make_leaf(in, false), vk = make_leaf(k);
    Var loss = sum_all(correlate2d(vin, vk, 1, 1) * make_constant(g));
    auto want = gradient(loss, {vk});
    Tensor got = detail::corr2d_kgrad(in, g, 3, 3, 1, 1);
    for (int64_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == Catch::Approx(want[0].value()[i]).margin(1e-10));
}

TEST_CASE("flip and axis-swap behave as index permutations") {
    Tensor k({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor f = detail::flip_spatial_t(k);
    CHECK(f[0] == 4.0);
    CHECK(f[3] == 1.0);
    CHECK(f[4] == 8.0);

    Tensor s = detail::swap01_t(k);
    REQUIRE(s.shape() == std::vector<int64_t>({1, 2, 2, 2}));
    CHECK(s[0] == 1.0);
    CHECK(s[4] == 5.0);

    // Both are self-inverse / transpose pairs.
    Tensor ff = detail::flip_spatial_t(f);
    for (int64_t i = 0; i < k.size(); ++i) CHECK(ff[i] == k[i]);
}

TEST_CASE("bilinear resize matches the per-pixel oracle") {
    Rng rng(13);
    const struct { std::vector<int64_t> shape; int64_t oh, ow; } cases[] = {
        {{1, 4, 4}, 7, 7},
        {{2, 5, 3}, 3, 9},
        {{3, 2, 2}, 5, 5},
        {{1, 6, 6}, 6, 6},   // identity
        {{1, 1, 5}, 1, 11},  // single row
        {{2, 2, 4, 4}, 3, 3}, // rank-4 batch
        {{1, 5, 5}, 1, 1},   // collapse to midpoint
    };
    for (const auto& c : cases) {
        Tensor x = random_tensor(c.shape, rng);
        Tensor got = detail::bilinear_fwd(x, c.oh, c.ow);
        Tensor want = brute_bilinear(x, c.oh, c.ow);
        REQUIRE(got.shape() == want.shape());
        for (int64_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == Catch::Approx(want[i]).margin(1e-12));
    }
}

TEST_CASE("bilinear resize at equal extents is exact identity") {
    Rng rng(14);
    Tensor x = random_tensor({2, 7, 9}, rng);
    Tensor y = detail::bilinear_fwd(x, 7, 9);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("bilinear 2x2 to 3x3 lands on hand-computed values") {
    Tensor x({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
    Tensor y = detail::bilinear_fwd(x, 3, 3);
    CHECK(y[0] == 0.0);           // corners preserved
    CHECK(y[2] == 1.0);
    CHECK(y[6] == 2.0);
    CHECK(y[8] == 3.0);
    CHECK(y[4] == Catch::Approx(1.5)); // center is the mean of all four
    CHECK(y[1] == Catch::Approx(0.5));
    CHECK(y[3] == Catch::Approx(1.0));
}

TEST_CASE("resize and adjoint form a transpose pair") {
    // <A x, y> == <x, A^T y> for every x, y.
    Rng rng(15);
    Tensor x = random_tensor({1, 5, 4}, rng);
    Tensor y = random_tensor({1, 8, 9}, rng);
    Tensor ax = detail::bilinear_fwd(x, 8, 9);
    Tensor aty = detail::bilinear_adj(y, 5, 4);
    double lhs = 0.0, rhs = 0.0;
    for (int64_t i = 0; i < ax.size(); ++i) lhs += ax[i] * y[i];
    for (int64_t i = 0; i < x.size(); ++i) rhs += x[i] * aty[i];
    CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("bilinear resize gradients match finite differences") {
    Rng rng(16);
    Tensor tx = random_tensor({2, 4, 5}, rng);
    Var x = make_leaf(tx);
    Var loss = mean_all(square(bilinear_resize(x, 7, 3)));
    auto g = gradient(loss, {x});
    auto fd = finite_difference(
        [](const std::vector<Tensor>& ts) {
            return mean_all(square(bilinear_resize(make_leaf(ts[0], false), 7, 3))).item();
        },
        {tx}, 1e-6);
    for (int64_t i = 0; i < tx.size(); ++i)
        CHECK(fuzz::mixed_rel_err(g[0].value()[i], fd[0][i]) < 1e-6);
}

TEST_CASE("bilinear resize supports second-order differentiation") {
    Rng rng(17);
    Tensor tx = random_tensor({1, 3, 3}, rng);
    Tensor dir = random_tensor({1, 3, 3}, rng);
    Var x = make_leaf(tx);
    // Quartic in x so the Hessian is non-constant.
    Var loss = mean_all(square(square(bilinear_resize(x, 5, 5))));
    auto g = gradient(loss, {x});
    Var s = sum_all(g[0] * make_constant(dir));
    auto hv = gradient(s, {x});

    const double eps = 1e-5;
    auto grad_at = [&](double sgn) {
        Tensor shifted = tx;
        for (int64_t i = 0; i < shifted.size(); ++i) shifted[i] += sgn * eps * dir[i];
        Var xx = make_leaf(shifted);
        Var l = mean_all(square(square(bilinear_resize(xx, 5, 5))));
        return gradient(l, {xx})[0].value();
    };
    Tensor gp = grad_at(1.0), gm = grad_at(-1.0);
    for (int64_t i = 0; i < tx.size(); ++i) {
        const double fd = (gp[i] - gm[i]) / (2 * eps);
        CHECK(fuzz::mixed_rel_err(hv[0].value()[i], fd) < 1e-5);
    }
}

TEST_CASE("resize argument validation") {
    Rng rng(18);
    Tensor x = random_tensor({3, 3}, rng);
    CHECK_THROWS_AS(detail::bilinear_fwd(x, 0, 3), std::invalid_argument);
    CHECK_THROWS_AS(detail::bilinear_fwd(Tensor({4}, {1, 2, 3, 4}), 2, 2),
                    std::invalid_argument);
}

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "metatrack/autodiff.hpp"

namespace metatrack {

namespace detail {

// Cross-correlation of a [Ci,H,W] input with a [Co,Ci,kh,kw] kernel bank under
// symmetric zero padding. Output is [Co, H+2*py-kh+1, W+2*px-kw+1].
inline Tensor corr2d_fwd(const Tensor& in, const Tensor& k, int64_t py, int64_t px) {
    if (in.rank() != 3 || k.rank() != 4)
        throw std::invalid_argument("correlate2d: input must be rank 3, kernel rank 4");
    if (py < 0 || px < 0)
        throw std::invalid_argument("correlate2d: negative padding");
    const int64_t Ci = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int64_t Co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(1) != Ci)
        throw std::invalid_argument("correlate2d: channel mismatch (input " +
                                    Tensor::shape_str(in.shape()) + ", kernel " +
                                    Tensor::shape_str(k.shape()) + ")");
    const int64_t Ho = H + 2 * py - kh + 1;
    const int64_t Wo = W + 2 * px - kw + 1;
    if (Ho < 1 || Wo < 1)
        throw std::invalid_argument("correlate2d: kernel larger than padded input");

    Tensor out({Co, Ho, Wo});
    const double* ip = in.data();
    const double* kp = k.data();
    double* op = out.data();
    for (int64_t co = 0; co < Co; ++co) {
        double* out_c = op + co * Ho * Wo;
        for (int64_t ci = 0; ci < Ci; ++ci) {
            const double* in_c = ip + ci * H * W;
            const double* k_c = kp + (co * Ci + ci) * kh * kw;
            for (int64_t u = 0; u < kh; ++u) {
                const int64_t y0 = std::max<int64_t>(0, py - u);
                const int64_t y1 = std::min(Ho - 1, H - 1 + py - u);
                for (int64_t v = 0; v < kw; ++v) {
                    const double wgt = k_c[u * kw + v];
                    const int64_t x0 = std::max<int64_t>(0, px - v);
                    const int64_t x1 = std::min(Wo - 1, W - 1 + px - v);
                    if (wgt == 0.0 || y1 < y0 || x1 < x0) continue;
                    const int64_t len = x1 - x0 + 1;
                    for (int64_t y = y0; y <= y1; ++y) {
                        const double* ir = in_c + (y + u - py) * W + (x0 + v - px);
                        double* orow = out_c + y * Wo + x0;
                        for (int64_t x = 0; x < len; ++x) orow[x] += wgt * ir[x];
                    }
                }
            }
        }
    }
    return out;
}

// Gradient of corr2d_fwd with respect to its kernel: correlates the input with
// the output gradient. Returns a [Co,Ci,kh,kw] tensor.
inline Tensor corr2d_kgrad(const Tensor& in, const Tensor& g, int64_t kh, int64_t kw,
                           int64_t py, int64_t px) {
    if (in.rank() != 3 || g.rank() != 3)
        throw std::invalid_argument("corr_kernel_grad: rank-3 tensors required");
    const int64_t Ci = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int64_t Co = g.dim(0), Ho = g.dim(1), Wo = g.dim(2);
    if (Ho != H + 2 * py - kh + 1 || Wo != W + 2 * px - kw + 1)
        throw std::invalid_argument("corr_kernel_grad: gradient extent mismatch");

    Tensor out({Co, Ci, kh, kw});
    const double* ip = in.data();
    const double* gp = g.data();
    double* op = out.data();
    for (int64_t co = 0; co < Co; ++co) {
        const double* g_c = gp + co * Ho * Wo;
        for (int64_t ci = 0; ci < Ci; ++ci) {
            const double* in_c = ip + ci * H * W;
            double* o_c = op + (co * Ci + ci) * kh * kw;
            for (int64_t u = 0; u < kh; ++u) {
                const int64_t y0 = std::max<int64_t>(0, py - u);
                const int64_t y1 = std::min(Ho - 1, H - 1 + py - u);
                for (int64_t v = 0; v < kw; ++v) {
                    const int64_t x0 = std::max<int64_t>(0, px - v);
                    const int64_t x1 = std::min(Wo - 1, W - 1 + px - v);
                    double acc = 0.0;
                    if (y1 >= y0 && x1 >= x0) {
                        const int64_t len = x1 - x0 + 1;
                        for (int64_t y = y0; y <= y1; ++y) {
                            const double* ir = in_c + (y + u - py) * W + (x0 + v - px);
                            const double* gr = g_c + y * Wo + x0;
                            for (int64_t x = 0; x < len; ++x) acc += ir[x] * gr[x];
                        }
                    }
                    o_c[u * kw + v] = acc;
                }
            }
        }
    }
    return out;
}

inline Tensor flip_spatial_t(const Tensor& k) {
    if (k.rank() != 4)
        throw std::invalid_argument("flip_spatial: rank-4 tensor required");
    const int64_t A = k.dim(0), B = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    Tensor out(k.shape());
    const double* src = k.data();
    double* dst = out.data();
    for (int64_t ab = 0; ab < A * B; ++ab) {
        const double* s = src + ab * kh * kw;
        double* d = dst + ab * kh * kw;
        for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v)
                d[u * kw + v] = s[(kh - 1 - u) * kw + (kw - 1 - v)];
    }
    return out;
}

inline Tensor swap01_t(const Tensor& k) {
    if (k.rank() != 4)
        throw std::invalid_argument("swap01: rank-4 tensor required");
    const int64_t A = k.dim(0), B = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    Tensor out({B, A, kh, kw});
    const double* src = k.data();
    double* dst = out.data();
    const int64_t plane = kh * kw;
    for (int64_t a = 0; a < A; ++a)
        for (int64_t b = 0; b < B; ++b)
            std::copy(src + (a * B + b) * plane, src + (a * B + b + 1) * plane,
                      dst + (b * A + a) * plane);
    return out;
}

struct BilinearAxis {
    std::vector<int64_t> lo;   // lower source index per output position
    std::vector<double> frac;  // interpolation weight toward lo+1
};

// Align-corners source positions; a single output sample reads the midpoint.
inline BilinearAxis bilinear_axis(int64_t in_n, int64_t out_n) {
    BilinearAxis ax;
    ax.lo.resize(static_cast<size_t>(out_n));
    ax.frac.resize(static_cast<size_t>(out_n));
    for (int64_t i = 0; i < out_n; ++i) {
        double src = out_n > 1
            ? static_cast<double>(i) * static_cast<double>(in_n - 1) /
                  static_cast<double>(out_n - 1)
            : static_cast<double>(in_n - 1) / 2.0;
        int64_t lo = static_cast<int64_t>(std::floor(src));
        if (lo > in_n - 2) lo = in_n - 2;
        if (lo < 0) lo = 0;
        double f = src - static_cast<double>(lo);
        if (in_n == 1) { lo = 0; f = 0.0; }
        ax.lo[static_cast<size_t>(i)] = lo;
        ax.frac[static_cast<size_t>(i)] = f;
    }
    return ax;
}

inline void check_resize_args(const Tensor& x, int64_t oh, int64_t ow, const char* who) {
    if (x.rank() < 2)
        throw std::invalid_argument(std::string(who) + ": rank >= 2 required");
    if (oh < 1 || ow < 1)
        throw std::invalid_argument(std::string(who) + ": output extents must be positive");
}

// Resamples the trailing two axes to (oh, ow); leading axes are batch.
inline Tensor bilinear_fwd(const Tensor& x, int64_t oh, int64_t ow) {
    check_resize_args(x, oh, ow, "bilinear_resize");
    const size_t r = x.shape().size();
    const int64_t H = x.shape()[r - 2], W = x.shape()[r - 1];
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < r; ++i) batch *= x.shape()[i];

    auto ay = bilinear_axis(H, oh);
    auto axx = bilinear_axis(W, ow);
    std::vector<int64_t> out_shape = x.shape();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    Tensor out(out_shape);
    const double* src = x.data();
    double* dst = out.data();
    for (int64_t b = 0; b < batch; ++b) {
        const double* plane = src + b * H * W;
        double* oplane = dst + b * oh * ow;
        for (int64_t y = 0; y < oh; ++y) {
            const int64_t y0 = ay.lo[static_cast<size_t>(y)];
            const double fy = ay.frac[static_cast<size_t>(y)];
            const int64_t y1 = H == 1 ? y0 : y0 + 1;
            const double* r0 = plane + y0 * W;
            const double* r1 = plane + y1 * W;
            double* orow = oplane + y * ow;
            for (int64_t x2 = 0; x2 < ow; ++x2) {
                const int64_t x0 = axx.lo[static_cast<size_t>(x2)];
                const double fx = axx.frac[static_cast<size_t>(x2)];
                const int64_t x1 = W == 1 ? x0 : x0 + 1;
                const double top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                const double bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                orow[x2] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    return out;
}

// Transpose of bilinear_fwd: scatters gradients at (oh, ow) back to (ih, iw).
inline Tensor bilinear_adj(const Tensor& g, int64_t ih, int64_t iw) {
    check_resize_args(g, ih, iw, "bilinear_resize_adjoint");
    const size_t r = g.shape().size();
    const int64_t oh = g.shape()[r - 2], ow = g.shape()[r - 1];
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < r; ++i) batch *= g.shape()[i];

    auto ay = bilinear_axis(ih, oh);
    auto axx = bilinear_axis(iw, ow);
    std::vector<int64_t> out_shape = g.shape();
    out_shape[r - 2] = ih;
    out_shape[r - 1] = iw;
    Tensor out(out_shape);
    const double* src = g.data();
    double* dst = out.data();
    for (int64_t b = 0; b < batch; ++b) {
        const double* gplane = src + b * oh * ow;
        double* plane = dst + b * ih * iw;
        for (int64_t y = 0; y < oh; ++y) {
            const int64_t y0 = ay.lo[static_cast<size_t>(y)];
            const double fy = ay.frac[static_cast<size_t>(y)];
            const int64_t y1 = ih == 1 ? y0 : y0 + 1;
            const double* grow = gplane + y * ow;
            for (int64_t x2 = 0; x2 < ow; ++x2) {
                const int64_t x0 = axx.lo[static_cast<size_t>(x2)];
                const double fx = axx.frac[static_cast<size_t>(x2)];
                const int64_t x1 = iw == 1 ? x0 : x0 + 1;
                const double gv = grow[x2];
                plane[y0 * iw + x0] += gv * (1.0 - fy) * (1.0 - fx);
                plane[y0 * iw + x1] += gv * (1.0 - fy) * fx;
                plane[y1 * iw + x0] += gv * fy * (1.0 - fx);
                plane[y1 * iw + x1] += gv * fy * fx;
            }
        }
    }
    return out;
}

} // namespace detail

inline Var corr_kernel_grad(const Var& input, const Var& grad_out, int64_t kh, int64_t kw,
                            int64_t pad_y, int64_t pad_x);
inline Var flip_spatial(const Var& k);
inline Var swap01(const Var& k);

// The correlation pair below is closed under differentiation: each backward is
// written with correlate2d / corr_kernel_grad themselves, so gradients of
// gradients keep working to any order.
inline Var correlate2d(const Var& input, const Var& kernel, int64_t pad_y, int64_t pad_x) {
    Tensor out = detail::corr2d_fwd(input.value(), kernel.value(), pad_y, pad_x);
    const int64_t kh = kernel.shape()[2], kw = kernel.shape()[3];
    return detail::make_op(std::move(out), {input, kernel},
        [kh, kw, pad_y, pad_x](const std::vector<Var>& in, const Var&, const Var& g) {
            Var g_input = correlate2d(g, flip_spatial(swap01(in[1])),
                                      kh - 1 - pad_y, kw - 1 - pad_x);
            Var g_kernel = corr_kernel_grad(in[0], g, kh, kw, pad_y, pad_x);
            return std::vector<Var>{g_input, g_kernel};
        });
}

inline Var corr_kernel_grad(const Var& input, const Var& grad_out, int64_t kh, int64_t kw,
                            int64_t pad_y, int64_t pad_x) {
    Tensor out = detail::corr2d_kgrad(input.value(), grad_out.value(), kh, kw, pad_y, pad_x);
    return detail::make_op(std::move(out), {input, grad_out},
        [kh, kw, pad_y, pad_x](const std::vector<Var>& in, const Var&, const Var& g2) {
            Var g_input = correlate2d(in[1], flip_spatial(swap01(g2)),
                                      kh - 1 - pad_y, kw - 1 - pad_x);
            Var g_gout = correlate2d(in[0], g2, pad_y, pad_x);
            return std::vector<Var>{g_input, g_gout};
        });
}

inline Var flip_spatial(const Var& k) {
    Tensor out = detail::flip_spatial_t(k.value());
    return detail::make_op(std::move(out), {k},
        [](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{flip_spatial(g)};
        });
}

inline Var swap01(const Var& k) {
    Tensor out = detail::swap01_t(k.value());
    return detail::make_op(std::move(out), {k},
        [](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{swap01(g)};
        });
}

inline Var bilinear_resize_adjoint(const Var& g, int64_t in_h, int64_t in_w);

inline Var bilinear_resize(const Var& x, int64_t out_h, int64_t out_w) {
    Tensor out = detail::bilinear_fwd(x.value(), out_h, out_w);
    const size_t r = x.shape().size();
    const int64_t H = x.shape()[r - 2], W = x.shape()[r - 1];
    return detail::make_op(std::move(out), {x},
        [H, W](const std::vector<Var>&, const Var&, const Var& g) {
            return std::vector<Var>{bilinear_resize_adjoint(g, H, W)};
        });
}

inline Var bilinear_resize_adjoint(const Var& g, int64_t in_h, int64_t in_w) {
    Tensor out = detail::bilinear_adj(g.value(), in_h, in_w);
    const size_t r = g.shape().size();
    const int64_t oh = g.shape()[r - 2], ow = g.shape()[r - 1];
    return detail::make_op(std::move(out), {g},
        [oh, ow](const std::vector<Var>&, const Var&, const Var& g2) {
            return std::vector<Var>{bilinear_resize(g2, oh, ow)};
        });
}

} // namespace metatrack

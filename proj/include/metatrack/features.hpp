#pragma once

#include <cmath>
#include <stdexcept>

#include "metatrack/geometry.hpp"
#include "metatrack/image_ops.hpp"
#include "metatrack/rng.hpp"
#include "metatrack/tensor.hpp"

namespace metatrack {

// Square crop around a box, resampled to a fixed side. Carries the source
// geometry so boxes can be mapped between frame and patch coordinates.
struct Patch {
    Tensor pixels;          // [3, side, side]
    double center_x = 0.0;  // ROI center in frame coordinates
    double center_y = 0.0;
    double roi_side = 0.0;  // ROI side length in frame pixels
    int64_t side = 0;       // output side length in patch pixels

    double scale() const { return static_cast<double>(side) / roi_side; }
};

// ROI side is gamma * sqrt(w*h), centered on the box center. Samples that
// fall outside the frame read the frame's per-channel mean color.
inline Patch crop_patch(const Tensor& frame, const Box& box, double gamma, int64_t out_side) {
    require_valid(box, "crop_patch");
    if (gamma <= 0.0)
        throw std::invalid_argument("crop_patch: gamma must be positive");
    if (frame.rank() != 3 || frame.dim(0) != 3)
        throw std::invalid_argument("crop_patch: [3,H,W] frame required");
    if (out_side < 1)
        throw std::invalid_argument("crop_patch: output side must be positive");

    const int64_t H = frame.dim(1), W = frame.dim(2);
    Patch p;
    p.roi_side = gamma * std::sqrt(box.w * box.h);
    p.center_x = box.cx();
    p.center_y = box.cy();
    p.side = out_side;
    p.pixels = Tensor({3, out_side, out_side});

    double mean[3];
    for (int64_t c = 0; c < 3; ++c) {
        const double* plane = frame.data() + c * H * W;
        double acc = 0.0;
        for (int64_t i = 0; i < H * W; ++i) acc += plane[i];
        mean[c] = acc / static_cast<double>(H * W);
    }

    const double step = p.roi_side / static_cast<double>(out_side);
    const double left = p.center_x - 0.5 * p.roi_side;
    const double top = p.center_y - 0.5 * p.roi_side;
    // Continuous coordinate of output pixel j is left + (j+0.5)*step; pixel
    // centers of the source sit at integer+0.5, so the index-space position
    // is that minus 0.5.
    std::vector<double> sx(static_cast<size_t>(out_side)), sy(static_cast<size_t>(out_side));
    for (int64_t j = 0; j < out_side; ++j) {
        sx[static_cast<size_t>(j)] = left + (static_cast<double>(j) + 0.5) * step - 0.5;
        sy[static_cast<size_t>(j)] = top + (static_cast<double>(j) + 0.5) * step - 0.5;
    }

    for (int64_t c = 0; c < 3; ++c) {
        const double* plane = frame.data() + c * H * W;
        double* out = p.pixels.data() + c * out_side * out_side;
        const double fill = mean[c];
        auto tap = [&](int64_t yy, int64_t xx) {
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) return fill;
            return plane[yy * W + xx];
        };
        for (int64_t y = 0; y < out_side; ++y) {
            const double fy = sy[static_cast<size_t>(y)];
            const int64_t y0 = static_cast<int64_t>(std::floor(fy));
            const double wy = fy - static_cast<double>(y0);
            for (int64_t x = 0; x < out_side; ++x) {
                const double fx = sx[static_cast<size_t>(x)];
                const int64_t x0 = static_cast<int64_t>(std::floor(fx));
                const double wx = fx - static_cast<double>(x0);
                const double v =
                    tap(y0, x0) * (1 - wy) * (1 - wx) + tap(y0, x0 + 1) * (1 - wy) * wx +
                    tap(y0 + 1, x0) * wy * (1 - wx) + tap(y0 + 1, x0 + 1) * wy * wx;
                out[y * out_side + x] = v;
            }
        }
    }
    return p;
}

inline Box box_to_patch(const Patch& p, const Box& frame_box) {
    const double s = p.scale();
    return Box::from_center((frame_box.cx() - (p.center_x - 0.5 * p.roi_side)) * s,
                            (frame_box.cy() - (p.center_y - 0.5 * p.roi_side)) * s,
                            frame_box.w * s, frame_box.h * s);
}

inline Box box_to_frame(const Patch& p, const Box& patch_box) {
    const double s = p.scale();
    return Box::from_center(patch_box.cx() / s + (p.center_x - 0.5 * p.roi_side),
                            patch_box.cy() / s + (p.center_y - 0.5 * p.roi_side),
                            patch_box.w / s, patch_box.h / s);
}

namespace detail {

inline Tensor avg_pool2(const Tensor& x) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("avg_pool2: even spatial extent required");
    Tensor out({C, H / 2, W / 2});
    const double* src = x.data();
    double* dst = out.data();
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H / 2; ++y)
            for (int64_t xx = 0; xx < W / 2; ++xx) {
                const double* a = src + c * H * W + 2 * y * W + 2 * xx;
                dst[(c * (H / 2) + y) * (W / 2) + xx] =
                    0.25 * (a[0] + a[1] + a[W] + a[W + 1]);
            }
    return out;
}

inline void tanh_inplace(Tensor& x) {
    double* p = x.data();
    for (int64_t i = 0; i < x.size(); ++i) p[i] = std::tanh(p[i]);
}

} // namespace detail

// Frozen convolutional feature extractor with total stride 4: three 3x3
// same-padded correlation layers (3 -> 8 -> 16 -> channels) with tanh
// nonlinearities and two 2x average-pool stages. Weights are drawn once from
// a seeded uniform distribution and never change.
class FeatureExtractor {
public:
    static constexpr int64_t kStride = 4;

    FeatureExtractor(uint64_t seed, int64_t out_channels)
        : channels_(out_channels) {
        if (out_channels < 1)
            throw std::invalid_argument("FeatureExtractor: positive channel count required");
        Rng rng(seed);
        w1_ = init_bank(8, 3, rng);
        w2_ = init_bank(16, 8, rng);
        w3_ = init_bank(out_channels, 16, rng);
    }

    int64_t channels() const { return channels_; }

    // patch pixels [3,S,S] with S divisible by 4 -> features [channels, S/4, S/4]
    Tensor operator()(const Tensor& pixels) const {
        if (pixels.rank() != 3 || pixels.dim(0) != 3)
            throw std::invalid_argument("extract_features: [3,S,S] patch required");
        if (pixels.dim(1) % kStride != 0 || pixels.dim(2) % kStride != 0)
            throw std::invalid_argument("extract_features: patch side not divisible by stride");
        Tensor a = detail::corr2d_fwd(pixels, w1_, 1, 1);
        detail::tanh_inplace(a);
        a = detail::avg_pool2(a);
        a = detail::corr2d_fwd(a, w2_, 1, 1);
        detail::tanh_inplace(a);
        a = detail::avg_pool2(a);
        a = detail::corr2d_fwd(a, w3_, 1, 1);
        detail::tanh_inplace(a);
        return a;
    }

private:
    static Tensor init_bank(int64_t co, int64_t ci, Rng& rng) {
        Tensor w({co, ci, 3, 3});
        const double bound = 1.0 / std::sqrt(static_cast<double>(ci * 9));
        for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
        return w;
    }

    int64_t channels_;
    Tensor w1_, w2_, w3_;
};

} // namespace metatrack

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "metatrack/autodiff.hpp"
#include "metatrack/geometry.hpp"
#include "metatrack/image_ops.hpp"
#include "metatrack/rng.hpp"

namespace metatrack {

// Spatial filter extents in feature cells, always odd, plus the anchor size
// they imply. The anchor is the filter extent divided by the enlargement
// factor rho, i.e. the object size the filter was sized for.
struct FilterShape {
    int64_t rows = 0;       // f_r
    int64_t cols = 0;       // f_c
    double anchor_w = 0.0;  // f_c / rho, in feature cells
    double anchor_h = 0.0;  // f_r / rho
};

namespace detail {

inline int64_t odd_ceil(double v) {
    const int64_t m = static_cast<int64_t>(std::ceil(v));
    return m - (m % 2) + 1;
}

} // namespace detail

// Object size (w, h) in patch pixels -> odd filter extents covering the
// object enlarged by rho, measured in feature cells of the given stride.
inline FilterShape filter_shape(double w, double h, double rho, double cell) {
    if (w <= 0.0 || h <= 0.0)
        throw std::invalid_argument("filter_shape: non-positive object size");
    FilterShape fs;
    fs.rows = detail::odd_ceil(rho * h / cell);
    fs.cols = detail::odd_ceil(rho * w / cell);
    fs.anchor_w = static_cast<double>(fs.cols) / rho;
    fs.anchor_h = static_cast<double>(fs.rows) / rho;
    return fs;
}

struct ModelShape {
    int64_t feat_channels = 16;    // C_f
    int64_t reduced_channels = 8;  // C_r
    int64_t base_size = 11;        // K, odd

    int64_t param_count() const {
        return 2 * reduced_channels * feat_channels +
               5 * reduced_channels * base_size * base_size;
    }
    bool operator==(const ModelShape&) const = default;
};

// Two-branch tracking model. The four banks may be leaf tensors (a model
// being trained) or graph nodes (a model mid-unroll, expressed as a function
// of earlier parameters).
struct TrackingModel {
    Var reduce_cf;   // [C_r, C_f, 1, 1]
    Var corr;        // [1, C_r, K, K]
    Var reduce_reg;  // [C_r, C_f, 1, 1]
    Var reg;         // [4, C_r, K, K]
    ModelShape shape;
};

inline TrackingModel make_model(const ModelShape& s, Rng& rng) {
    if (s.base_size % 2 == 0 || s.base_size < 1)
        throw std::invalid_argument("make_model: base filter size must be odd");
    auto bank = [&rng](std::vector<int64_t> shape, double fan_in) {
        Tensor t(shape);
        const double bound = 1.0 / std::sqrt(fan_in);
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
        return make_leaf(std::move(t));
    };
    const double k2 = static_cast<double>(s.base_size * s.base_size);
    TrackingModel m;
    m.reduce_cf = bank({s.reduced_channels, s.feat_channels, 1, 1},
                       static_cast<double>(s.feat_channels));
    m.corr = bank({1, s.reduced_channels, s.base_size, s.base_size},
                  static_cast<double>(s.reduced_channels) * k2);
    m.reduce_reg = bank({s.reduced_channels, s.feat_channels, 1, 1},
                        static_cast<double>(s.feat_channels));
    m.reg = bank({4, s.reduced_channels, s.base_size, s.base_size},
                 static_cast<double>(s.reduced_channels) * k2);
    m.shape = s;
    return m;
}

// Flat parameter order: reduce_cf, corr, reduce_reg, reg.
inline Var flatten_model(const TrackingModel& m) {
    return concat({reshape(m.reduce_cf, {m.reduce_cf.size()}),
                   reshape(m.corr, {m.corr.size()}),
                   reshape(m.reduce_reg, {m.reduce_reg.size()}),
                   reshape(m.reg, {m.reg.size()})},
                  0);
}

inline TrackingModel model_from_flat(const Var& flat, const ModelShape& s) {
    if (flat.size() != s.param_count())
        throw std::invalid_argument("model_from_flat: parameter count mismatch");
    const int64_t nr = s.reduced_channels * s.feat_channels;
    const int64_t k2 = s.base_size * s.base_size;
    int64_t at = 0;
    TrackingModel m;
    m.reduce_cf = reshape(slice(flat, 0, at, nr), {s.reduced_channels, s.feat_channels, 1, 1});
    at += nr;
    m.corr = reshape(slice(flat, 0, at, s.reduced_channels * k2),
                     {1, s.reduced_channels, s.base_size, s.base_size});
    at += s.reduced_channels * k2;
    m.reduce_reg = reshape(slice(flat, 0, at, nr), {s.reduced_channels, s.feat_channels, 1, 1});
    at += nr;
    m.reg = reshape(slice(flat, 0, at, 4 * s.reduced_channels * k2),
                    {4, s.reduced_channels, s.base_size, s.base_size});
    m.shape = s;
    return m;
}

// Bilinear resample of every spatial slice to the filter extents; the
// identity when the extents equal the stored size.
inline Var warp_filter(const Var& bank, const FilterShape& fs) {
    return bilinear_resize(bank, fs.rows, fs.cols);
}

inline Var forward_response(const Var& features, const TrackingModel& m, const FilterShape& fs) {
    Var reduced = correlate2d(features, m.reduce_cf, 0, 0);
    Var k = warp_filter(m.corr, fs);
    Var resp = correlate2d(reduced, k, (fs.rows - 1) / 2, (fs.cols - 1) / 2);
    return reshape(resp, {resp.shape()[1], resp.shape()[2]});
}

inline Var forward_regression(const Var& features, const TrackingModel& m, const FilterShape& fs) {
    Var reduced = correlate2d(features, m.reduce_reg, 0, 0);
    Var k = warp_filter(m.reg, fs);
    return correlate2d(reduced, k, (fs.rows - 1) / 2, (fs.cols - 1) / 2);
}

// Feature-cell center j sits at patch coordinate (j + 0.5) * cell.
inline double cell_to_pixel(double cell_index, double cell) {
    return (cell_index + 0.5) * cell;
}

inline double pixel_to_cell(double pixel, double cell) {
    return pixel / cell - 0.5;
}

// Gaussian label over an extent x extent cell grid, peak at (cx, cy) in cell
// coordinates, falling off with the object's size (sigma = size / cell).
inline Tensor label_map(double cx, double cy, double w, double h, double alpha,
                        double cell, int64_t extent) {
    if (extent < 1)
        throw std::invalid_argument("label_map: positive extent required");
    if (w <= 0.0 || h <= 0.0)
        throw std::invalid_argument("label_map: non-positive object size");
    const double sx = w / cell, sy = h / cell;
    Tensor m({extent, extent});
    double* p = m.data();
    for (int64_t y = 0; y < extent; ++y)
        for (int64_t x = 0; x < extent; ++x) {
            const double dx = (static_cast<double>(x) - cx) / sx;
            const double dy = (static_cast<double>(y) - cy) / sy;
            p[y * extent + x] = std::exp(-alpha * (dx * dx + dy * dy));
        }
    return m;
}

struct BoxDelta {
    double tx = 0.0, ty = 0.0, tw = 0.0, th = 0.0;
};

inline BoxDelta encode_box(const Box& b, const Box& anchor) {
    require_valid(b, "encode_box");
    require_valid(anchor, "encode_box");
    return {(b.cx() - anchor.cx()) / anchor.w, (b.cy() - anchor.cy()) / anchor.h,
            std::log(b.w / anchor.w), std::log(b.h / anchor.h)};
}

inline Box decode_box(const BoxDelta& d, const Box& anchor) {
    require_valid(anchor, "decode_box");
    return Box::from_center(anchor.cx() + d.tx * anchor.w, anchor.cy() + d.ty * anchor.h,
                            anchor.w * std::exp(d.tw), anchor.h * std::exp(d.th));
}

// Anchor box attached to feature cell (row, col), in patch pixels.
inline Box anchor_at(int64_t row, int64_t col, const FilterShape& fs, double cell) {
    return Box::from_center(cell_to_pixel(static_cast<double>(col), cell),
                            cell_to_pixel(static_cast<double>(row), cell),
                            fs.anchor_w * cell, fs.anchor_h * cell);
}

// One frame's worth of training targets for a fixed filter shape.
struct TrainingSample {
    Tensor features;  // [C_f, n, n], treated as constant by all graphs
    Tensor label;     // [n, n]
    Tensor deltas;    // [4, n, n], encoding of the object box vs. each cell's anchor
    Tensor pos_mask;  // [n, n], 1 where label >= 0.5
    int64_t pos_count = 0;
};

// Builds label, delta field and positive mask for an object box given in
// patch pixels. The label center snaps to the nearest cell so the map keeps
// a unique peak of exactly 1; deltas encode the un-snapped box.
inline TrainingSample make_training_sample(Tensor features, const Box& box_patch,
                                           const FilterShape& fs, double alpha, double cell) {
    require_valid(box_patch, "make_training_sample");
    if (features.rank() != 3 || features.dim(1) != features.dim(2))
        throw std::invalid_argument("make_training_sample: square [C,n,n] features required");
    const int64_t n = features.dim(1);
    const double cx_cell = pixel_to_cell(box_patch.cx(), cell);
    const double cy_cell = pixel_to_cell(box_patch.cy(), cell);
    const double snap_x = std::floor(cx_cell + 0.5);
    const double snap_y = std::floor(cy_cell + 0.5);
    if (snap_x < 0 || snap_x >= static_cast<double>(n) || snap_y < 0 ||
        snap_y >= static_cast<double>(n))
        throw std::invalid_argument("make_training_sample: box center outside the patch grid");

    TrainingSample s;
    s.label = label_map(snap_x, snap_y, box_patch.w, box_patch.h, alpha, cell, n);
    s.deltas = Tensor({4, n, n});
    s.pos_mask = Tensor({n, n});
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            const BoxDelta d = encode_box(box_patch, anchor_at(y, x, fs, cell));
            s.deltas[(0 * n + y) * n + x] = d.tx;
            s.deltas[(1 * n + y) * n + x] = d.ty;
            s.deltas[(2 * n + y) * n + x] = d.tw;
            s.deltas[(3 * n + y) * n + x] = d.th;
            if (s.label[y * n + x] >= 0.5) {
                s.pos_mask[y * n + x] = 1.0;
                ++s.pos_count;
            }
        }
    s.features = std::move(features);
    return s;
}

// Response L2 term plus positive-cell-weighted smooth-L1 regression term.
inline Var tracking_loss(const Var& features, const TrainingSample& s,
                         const TrackingModel& m, const FilterShape& fs) {
    Var resp = forward_response(features, m, fs);
    if (resp.shape() != s.label.shape())
        throw std::invalid_argument("tracking_loss: response/label extent mismatch");
    Var response_term = sum_all(square(resp - make_constant(s.label)));

    Var reg = forward_regression(features, m, fs);
    Var sl = smooth_l1(reg - make_constant(s.deltas));
    Var weighted = sum_all(sl * make_constant(s.pos_mask));
    return response_term + scale(weighted, 1.0 / static_cast<double>(s.pos_count));
}

// Mean tracking loss over a labelled batch; every sample shares one filter
// geometry.
inline Var update_loss(const std::vector<TrainingSample>& batch, const std::vector<Var>& feats,
                       const TrackingModel& m, const FilterShape& fs) {
    if (batch.empty() || batch.size() != feats.size())
        throw std::invalid_argument("update_loss: batch and features must align and be non-empty");
    Var acc = tracking_loss(feats[0], batch[0], m, fs);
    for (size_t i = 1; i < batch.size(); ++i)
        acc = acc + tracking_loss(feats[i], batch[i], m, fs);
    return scale(acc, 1.0 / static_cast<double>(batch.size()));
}

} // namespace metatrack

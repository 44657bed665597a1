#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "metatrack/checkpoint.hpp"
#include "metatrack/config.hpp"
#include "metatrack/features.hpp"
#include "metatrack/sequence.hpp"

namespace metatrack {

// The object's own box as it appears in a patch cropped around it: centered,
// area normalized to (patch/gamma)^2, aspect preserved.
inline Box self_patch_box(const Box& b, double gamma, int64_t patch_size) {
    require_valid(b, "self_patch_box");
    const double s = static_cast<double>(patch_size) / (gamma * std::sqrt(b.w * b.h));
    return Box::from_center(0.5 * static_cast<double>(patch_size),
                            0.5 * static_cast<double>(patch_size), b.w * s, b.h * s);
}

struct UpdateEvent {
    int64_t frame_index = 0;
    double loss_before = 0.0;
    double loss_after = 0.0;
    bool short_history = false;  // window not yet full when the event fired
};

// How model fitting behaves at update events: predicted per-coordinate rates
// (the trained path) or a fixed-rate baseline for comparisons.
struct TrackerOptions {
    bool learned_rates = true;
    double fixed_rate = 1e-3;  // used when learned_rates is false
    int64_t steps = 2;         // gradient steps per update event
};

class TrackerSession {
public:
    TrackerSession(const Config& cfg, const ModelParameters& params,
                   const FeatureExtractor& features, TrackerOptions options = {})
        : cfg_(cfg), options_(options), fx_(&features), shape_(params.shape),
          hidden_(params.hidden), runtime_(to_runtime(params)) {
        validate(cfg_);
        require_compatible(params, cfg_);
        if (options_.steps < 1)
            throw std::invalid_argument("tracker: at least one update step required");
        n_ = shape_.param_count();
    }

    // Fits the initial model: one rate-scaled gradient step on nine
    // size/aspect augmentations of the starting box.
    void initialize(const Tensor& frame, const Box& box) {
        require_valid(box, "tracker initialize");
        theta_ = flatten_model(runtime_.theta).value();
        Tensor lam0(theta_.shape());
        for (int64_t i = 0; i < n_; ++i)
            lam0[i] = 1.0 / (1.0 + std::exp(-runtime_.lambda0_raw.value()[i]));
        lambda_prev_ = lam0;
        h1_ = Tensor({hidden_, 1, n_});
        c1_ = h1_;
        h2_ = h1_;
        c2_ = h1_;

        const Box self = self_patch_box(box, cfg_.gamma, cfg_.patch_size);
        phi_ = filter_shape(self.w, self.h, cfg_.rho, static_cast<double>(cfg_.cell));

        static const double kFactors[3] = {0.8, 1.0, 1.2};
        std::vector<TrainingSample> batch;
        std::vector<Var> feats;
        for (double s : kFactors)
            for (double r : kFactors) {
                const Box aug = Box::from_center(box.cx(), box.cy(), box.w * s * r,
                                                 box.h * s / r);
                Patch p = crop_patch(frame, aug, cfg_.gamma, cfg_.patch_size);
                Tensor f = (*fx_)(p.pixels);
                const Box target = box_to_patch(p, box);
                batch.push_back(make_training_sample(f, target, phi_, cfg_.alpha,
                                                     static_cast<double>(cfg_.cell)));
                feats.push_back(make_constant(f));
                if (s == 1.0 && r == 1.0) {
                    history_.clear();
                    history_.push_back(FrameSample{std::move(f), target});
                }
            }

        Var theta = make_leaf(theta_);
        TrackingModel m = model_from_flat(theta, shape_);
        Var ell = update_loss(batch, feats, m, phi_);
        Var g = gradient(ell, {theta})[0];
        Var after = apply_update(theta, make_constant(lam0), g);
        const double before_val = ell.item();
        theta_ = after.value();

        UpdateEvent ev;
        ev.frame_index = 0;
        ev.loss_before = before_val;
        ev.loss_after = batch_loss(batch, feats);
        events_.push_back(ev);

        box_ = box;
        frames_tracked_ = 0;
        initialized_ = true;
    }

    // Locates the object in the next frame and advances the box estimate.
    Box track_frame(const Tensor& frame) {
        require_initialized();
        return cfg_.multi_scale ? track_multi_scale(frame) : track_regression(frame);
    }

    // Refits the model every tau-th tracked frame over the recent history;
    // no-op (returns false) on other frames.
    bool maybe_update() {
        require_initialized();
        if (frames_tracked_ == 0 || frames_tracked_ % cfg_.tau != 0) return false;

        const Box self = self_patch_box(box_, cfg_.gamma, cfg_.patch_size);
        phi_ = filter_shape(self.w, self.h, cfg_.rho, static_cast<double>(cfg_.cell));

        const int64_t window = 2 * cfg_.tau;
        std::vector<TrainingSample> batch = build_update_batch(
            history_, window, phi_, cfg_.alpha, static_cast<double>(cfg_.cell));
        std::vector<Var> feats;
        const size_t take = batch.size();
        for (size_t i = history_.size() - take; i < history_.size(); ++i)
            feats.push_back(make_constant(history_[i].features));

        UpdateEvent ev;
        ev.frame_index = frames_tracked_;
        ev.short_history = static_cast<int64_t>(history_.size()) < window;
        ev.loss_before = batch_loss(batch, feats);

        for (int64_t step = 0; step < options_.steps; ++step) {
            Var theta = make_leaf(theta_);
            TrackingModel m = model_from_flat(theta, shape_);
            Var ell = update_loss(batch, feats, m, phi_);
            Var g = gradient(ell, {theta})[0];
            if (options_.learned_rates) {
                OptimizerState st;
                st.coords = n_;
                st.h1 = make_constant(h1_);
                st.c1 = make_constant(c1_);
                st.h2 = make_constant(h2_);
                st.c2 = make_constant(c2_);
                st.lambda_prev = make_constant(lambda_prev_);
                Var inputs = stack_inputs(st, g, theta, ell);
                auto predicted = predict_learning_rates(inputs, runtime_.omega, st);
                theta_ = apply_update(theta, predicted.first, g).value();
                h1_ = predicted.second.h1.value();
                c1_ = predicted.second.c1.value();
                h2_ = predicted.second.h2.value();
                c2_ = predicted.second.c2.value();
                lambda_prev_ = predicted.first.value();
            } else {
                const Tensor& gv = g.value();
                for (int64_t i = 0; i < n_; ++i) theta_[i] -= options_.fixed_rate * gv[i];
            }
        }
        ev.loss_after = batch_loss(batch, feats);
        events_.push_back(ev);
        return true;
    }

    // track_frame plus the periodic refit, in order.
    Box step(const Tensor& frame) {
        Box b = track_frame(frame);
        maybe_update();
        return b;
    }

    const Box& current_box() const { return box_; }
    const std::vector<UpdateEvent>& update_events() const { return events_; }
    const FilterShape& filter_geometry() const { return phi_; }
    int64_t frames_tracked() const { return frames_tracked_; }

private:
    void require_initialized() const {
        if (!initialized_)
            throw std::logic_error("tracker: initialize must be called first");
    }

    double batch_loss(const std::vector<TrainingSample>& batch,
                      const std::vector<Var>& feats) const {
        TrackingModel m = model_from_flat(make_constant(theta_), shape_);
        return update_loss(batch, feats, m, phi_).item();
    }

    // motion prior: unit peak at the previous center, sigma half the object
    // extent, both in cells
    double window_at(double row, double col, const Box& prev_patch) const {
        const double c = static_cast<double>(cfg_.cell);
        const double cx = pixel_to_cell(prev_patch.cx(), c);
        const double cy = pixel_to_cell(prev_patch.cy(), c);
        const double sx = prev_patch.w / (2.0 * c), sy = prev_patch.h / (2.0 * c);
        const double dx = (col - cx) / sx, dy = (row - cy) / sy;
        return std::exp(-0.5 * (dx * dx + dy * dy));
    }

    Box track_regression(const Tensor& frame) {
        Patch patch = crop_patch(frame, box_, cfg_.gamma, cfg_.patch_size);
        Tensor f = (*fx_)(patch.pixels);
        Var fv = make_constant(f);
        TrackingModel m = model_from_flat(make_constant(theta_), shape_);
        Tensor resp = forward_response(fv, m, phi_).value();
        Tensor reg = forward_regression(fv, m, phi_).value();
        const int64_t n = resp.dim(0);

        const Box prev = box_to_patch(patch, box_);
        const double prev_pad = 0.5 * (prev.w + prev.h);
        const double prev_scale = std::sqrt((prev.w + prev_pad) * (prev.h + prev_pad));
        const double prev_ratio = prev.w / prev.h;

        double best = -1e300;
        Box best_cand = prev;  // fallback: stay put when no candidate decodes cleanly
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
                const BoxDelta d{reg[(0 * n + i) * n + j], reg[(1 * n + i) * n + j],
                                 reg[(2 * n + i) * n + j], reg[(3 * n + i) * n + j]};
                const Box cand = decode_box(d, anchor_at(i, j, phi_, cfg_.cell));
                if (!cand.valid()) continue;
                const double pad = 0.5 * (cand.w + cand.h);
                const double cscale = std::sqrt((cand.w + pad) * (cand.h + pad));
                const double cratio = cand.w / cand.h;
                const double shape_term =
                    std::max(cratio / prev_ratio, prev_ratio / cratio) *
                    std::max(cscale / prev_scale, prev_scale / cscale);
                const double penalty = std::exp(-cfg_.penalty_k * (shape_term - 1.0));
                const double score = resp[i * n + j] * penalty;
                const double blended = score * (1.0 - cfg_.window_weight) +
                                       window_at(static_cast<double>(i),
                                                 static_cast<double>(j), prev) *
                                           cfg_.window_weight;
                if (blended > best) {
                    best = blended;
                    best_cand = cand;
                }
            }

        const Box in_frame = box_to_frame(patch, best_cand);
        const double w = (1.0 - cfg_.size_beta) * box_.w + cfg_.size_beta * in_frame.w;
        const double h = (1.0 - cfg_.size_beta) * box_.h + cfg_.size_beta * in_frame.h;
        box_ = Box::from_center(in_frame.cx(), in_frame.cy(), w, h);

        history_.push_back(FrameSample{std::move(f), box_to_patch(patch, box_)});
        trim_history();
        ++frames_tracked_;
        return box_;
    }

    Box track_multi_scale(const Tensor& frame) {
        const double deltas[3] = {-cfg_.scale_delta, 0.0, cfg_.scale_delta};
        double best = -1e300;
        Box best_box = box_;
        Tensor best_feats;
        Patch best_patch;
        for (double d : deltas) {
            const double sc = 1.0 + d;
            const Box roi = Box::from_center(box_.cx(), box_.cy(), box_.w * sc, box_.h * sc);
            Patch patch = crop_patch(frame, roi, cfg_.gamma, cfg_.patch_size);
            Tensor f = (*fx_)(patch.pixels);
            TrackingModel m = model_from_flat(make_constant(theta_), shape_);
            Tensor resp = forward_response(make_constant(f), m, phi_).value();
            const int64_t n = resp.dim(0);
            const Box prev = box_to_patch(patch, box_);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    double score = resp[i * n + j] * (1.0 - cfg_.window_weight) +
                                   window_at(static_cast<double>(i), static_cast<double>(j),
                                             prev) *
                                       cfg_.window_weight;
                    if (d != 0.0) score *= cfg_.scale_penalty;
                    if (score > best) {
                        best = score;
                        const double px = cell_to_pixel(static_cast<double>(j), cfg_.cell);
                        const double py = cell_to_pixel(static_cast<double>(i), cfg_.cell);
                        const Box cand_patch =
                            Box::from_center(px, py, prev.w, prev.h);
                        const Box cand_frame = box_to_frame(patch, cand_patch);
                        const double w =
                            (1.0 - cfg_.size_beta) * box_.w + cfg_.size_beta * (box_.w * sc);
                        const double h =
                            (1.0 - cfg_.size_beta) * box_.h + cfg_.size_beta * (box_.h * sc);
                        best_box = Box::from_center(cand_frame.cx(), cand_frame.cy(), w, h);
                        best_feats = f;
                        best_patch = patch;
                    }
                }
        }
        box_ = best_box;
        history_.push_back(FrameSample{std::move(best_feats), box_to_patch(best_patch, box_)});
        trim_history();
        ++frames_tracked_;
        return box_;
    }

    void trim_history() {
        const size_t cap = static_cast<size_t>(2 * cfg_.tau);
        if (history_.size() > cap)
            history_.erase(history_.begin(),
                           history_.begin() + static_cast<std::ptrdiff_t>(history_.size() - cap));
    }

    Config cfg_;
    TrackerOptions options_;
    const FeatureExtractor* fx_;
    ModelShape shape_;
    int64_t hidden_ = 0;
    int64_t n_ = 0;
    RuntimeParameters runtime_;

    bool initialized_ = false;
    Tensor theta_;        // current flattened model values
    Tensor lambda_prev_;  // last applied rates
    Tensor h1_, c1_, h2_, c2_;
    FilterShape phi_;
    Box box_{};
    int64_t frames_tracked_ = 0;
    std::vector<FrameSample> history_;
    std::vector<UpdateEvent> events_;
};

} // namespace metatrack

#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "metatrack/adam.hpp"
#include "metatrack/checkpoint.hpp"
#include "metatrack/config.hpp"
#include "metatrack/features.hpp"
#include "metatrack/sequence.hpp"

namespace metatrack {

// Crops a search patch around the (optionally jittered) ground-truth box and
// maps the true box into patch coordinates.
inline FrameSample make_frame_sample(const Tensor& frame, const Box& gt,
                                     const FeatureExtractor& fx, const Config& cfg,
                                     Rng& rng, bool jitter) {
    Box roi = gt;
    if (jitter) {
        const double dx = rng.uniform(-cfg.jitter_center, cfg.jitter_center) * gt.w;
        const double dy = rng.uniform(-cfg.jitter_center, cfg.jitter_center) * gt.h;
        const double ds = std::exp(rng.uniform(-cfg.jitter_scale, cfg.jitter_scale));
        roi = Box::from_center(gt.cx() + dx, gt.cy() + dy, gt.w * ds, gt.h * ds);
    }
    Patch p = crop_patch(frame, roi, cfg.gamma, cfg.patch_size);
    FrameSample s;
    s.features = fx(p.pixels);
    s.box_patch = box_to_patch(p, gt);
    return s;
}

// Per-coordinate filter rescale factors drawn as exp(U(-kappa, kappa)),
// element-wise, with the response branch's coordinates using kappa_cf and the
// regression branch's kappa_reg. Kappa zero pins that branch's factors at
// exactly one. Element-wise draws are what force the rate predictor to read
// each coordinate's own magnitude instead of memorizing one global scale.
inline Tensor sample_rescale(const ModelShape& shape, double kappa_cf, double kappa_reg,
                             Rng& rng) {
    const int64_t nr = shape.reduced_channels * shape.feat_channels;
    const int64_t k2 = shape.base_size * shape.base_size;
    const int64_t n_cf = nr + shape.reduced_channels * k2;
    Tensor eps({shape.param_count()});
    for (int64_t i = 0; i < eps.size(); ++i) {
        const double kappa = i < n_cf ? kappa_cf : kappa_reg;
        eps[i] = std::exp(rng.uniform(-kappa, kappa));
    }
    return eps;
}

struct ClipResult {
    double meta_loss = 0.0;    // sum of the per-event future-frame losses
    double update_loss = 0.0;  // sum of the per-event batch losses (diagnostic)
    std::vector<Tensor> grads; // one per trainable leaf, same order as leaves()
};

inline std::vector<Var> trainable_leaves(const RuntimeParameters& rp) {
    std::vector<Var> leaves = {rp.theta.reduce_cf, rp.theta.corr, rp.theta.reduce_reg,
                               rp.theta.reg, rp.lambda0_raw};
    for (const Var& w : rp.omega.all()) leaves.push_back(w);
    return leaves;
}

// One clip of the unrolled objective. Event schedule over frame indices:
// event k sits at frame k*tau; the first event fits to frame 0 alone using
// the sigmoid of the raw initial rates, every later event fits to the tau
// frames before it with rates predicted from the recurrent state. Each event
// is scored on a frame drawn from the tau frames at and after it, with the
// filter geometry both steps share taken from the frame just before the
// event. Gradients flow through the whole chain, including the inner
// gradients themselves unless second_order is off.
// `fixed_rate` switches every event (the first included) to a constant
// per-coordinate rate, giving the plain-gradient-descent baseline the exact
// same unroll, clips and randomness as the learned path. `want_grads` off
// skips the backward pass for evaluation-only sweeps.
inline ClipResult process_clip(const Sequence& clip, const RuntimeParameters& rp,
                               const FeatureExtractor& fx, const Config& cfg, Rng& clip_rng,
                               bool want_grads = true, const double* fixed_rate = nullptr) {
    const int64_t T = cfg.updates, tau = cfg.tau;
    const int64_t horizon = T * tau;
    if (static_cast<int64_t>(clip.frames.size()) < horizon)
        throw std::invalid_argument("process_clip: clip shorter than the event horizon");

    Rng rescale_rng = clip_rng.fork(1);
    Rng aug_rng = clip_rng.fork(2);
    Rng delta_rng = clip_rng.fork(3);

    const ModelShape& shape = rp.theta.shape;
    const int64_t n = shape.param_count();

    Tensor eps_t = cfg.rescale_filters
                       ? sample_rescale(shape, cfg.kappa_cf, cfg.kappa_reg, rescale_rng)
                       : Tensor::full({n}, 1.0);
    Tensor inv_t({n});
    for (int64_t i = 0; i < n; ++i) inv_t[i] = 1.0 / eps_t[i];
    Var eps = make_constant(eps_t);
    Var inv_eps = make_constant(inv_t);

    // one jittered crop per frame, shared by every event that touches it
    std::vector<FrameSample> samples;
    samples.reserve(static_cast<size_t>(horizon));
    for (int64_t f = 0; f < horizon; ++f)
        samples.push_back(
            make_frame_sample(clip.frames[static_cast<size_t>(f)],
                              clip.boxes[static_cast<size_t>(f)], fx, cfg, aug_rng, true));

    Var theta = flatten_model(rp.theta) * eps;  // the rescaled view the updater sees
    Var lam0 = sigmoid(rp.lambda0_raw);
    OptimizerState state = init_state(n, lam0, rp.omega.hidden);

    ClipResult result;
    Var meta_total = make_scalar(0.0);
    for (int64_t ev = 0; ev < T; ++ev) {
        const int64_t e = ev * tau;
        const Box& phi_box = samples[static_cast<size_t>(std::max<int64_t>(e - 1, 0))].box_patch;
        const FilterShape fs =
            filter_shape(phi_box.w, phi_box.h, cfg.rho, static_cast<double>(cfg.cell));

        std::vector<TrainingSample> batch;
        std::vector<Var> feats;
        const int64_t lo = ev == 0 ? 0 : e - tau, hi = ev == 0 ? 1 : e;
        for (int64_t f = lo; f < hi; ++f) {
            const FrameSample& fsmp = samples[static_cast<size_t>(f)];
            batch.push_back(make_training_sample(fsmp.features, fsmp.box_patch, fs,
                                                 cfg.alpha, static_cast<double>(cfg.cell)));
            feats.push_back(make_constant(fsmp.features));
        }

        TrackingModel cur = model_from_flat(theta * inv_eps, shape);
        Var ell = update_loss(batch, feats, cur, fs);
        if (!std::isfinite(ell.item()))
            throw std::runtime_error("process_clip: update loss diverged (non-finite) at event " +
                                     std::to_string(ev) + "; lower the learning rates");
        Var g = gradient_wrt(ell, {theta})[0];
        if (!cfg.second_order) g = detach(g);

        Var lam;
        if (fixed_rate != nullptr) {
            lam = make_constant(Tensor::full({n}, *fixed_rate));
        } else if (ev == 0) {
            lam = lam0;
        } else {
            Var inputs = stack_inputs(state, g, theta, ell);
            auto predicted = predict_learning_rates(inputs, rp.omega, state);
            lam = predicted.first;
            state = predicted.second;
        }
        theta = apply_update(theta, lam, g);

        const int64_t delta = tau == 1 ? 0 : delta_rng.uniform_int(0, tau - 1);
        const FrameSample& future = samples[static_cast<size_t>(e + delta)];
        TrainingSample ms = make_training_sample(future.features, future.box_patch, fs,
                                                 cfg.alpha, static_cast<double>(cfg.cell));
        TrackingModel after = model_from_flat(theta * inv_eps, shape);
        Var ml = tracking_loss(make_constant(future.features), ms, after, fs);
        meta_total = meta_total + ml;

        result.update_loss += ell.item();
    }

    result.meta_loss = meta_total.item();
    if (want_grads) {
        std::vector<Var> leaves = trainable_leaves(rp);
        auto grads = gradient(meta_total, leaves);
        result.grads.reserve(leaves.size());
        for (const Var& gv : grads) result.grads.push_back(gv.value());
    }
    return result;
}

using ClipSource = std::function<Sequence(int64_t)>;

// Mean unrolled objective over held-out clips; pass a fixed rate to score
// the constant-rate baseline on the identical clips and random draws.
inline double eval_meta_loss(const ClipSource& source, int64_t clips, const Config& cfg,
                             const ModelParameters& params,
                             const double* fixed_rate = nullptr) {
    if (clips < 1) throw std::invalid_argument("eval_meta_loss: positive clip count required");
    RuntimeParameters rp = to_runtime(params);
    FeatureExtractor fx(cfg.feature_seed, cfg.feat_channels);
    double sum = 0.0;
    for (int64_t k = 0; k < clips; ++k) {
        Sequence clip = source(k);
        Rng clip_rng = Rng(cfg.seed).fork(0x20000 + static_cast<uint64_t>(k));
        sum += process_clip(clip, rp, fx, cfg, clip_rng, false, fixed_rate).meta_loss;
    }
    return sum / static_cast<double>(clips * cfg.updates);
}

struct LogRow {
    int64_t iteration = 0;
    double meta_loss = 0.0;    // averaged over clips and events
    double update_loss = 0.0;  // same normalization
    double seconds = 0.0;      // wall time since training start
};

struct MetaTrainResult {
    ModelParameters params;
    std::vector<LogRow> log;
};

// Endless stream of generated clips; clip index k is deterministic in
// (seed, stream, k). Separate streams keep training and held-out clips from
// ever colliding under one base seed.
inline ClipSource synthetic_source(const Config& cfg, uint64_t stream = 0) {
    const SyntheticConfig sc = synth_from(cfg);
    const uint64_t seed = cfg.seed;
    return [sc, seed, stream](int64_t index) {
        Rng root(seed);
        return generate_sequence(sc,
                                 root.fork(stream).fork(static_cast<uint64_t>(index)).next_u64());
    };
}

// Outer loop: per-iteration clip batches, serialized gradient reduction in
// clip order, one Adam family per parameter group, step-decayed rates, CSV
// log and periodic checkpoints. Aborts with a diagnostic when the averaged
// objective stops being finite.
inline MetaTrainResult run_meta_training(const ClipSource& source, const Config& cfg,
                                         const ModelParameters& init,
                                         const std::string& log_path = "",
                                         const std::string& checkpoint_dir = "") {
    validate(cfg);
    require_compatible(init, cfg);
    RuntimeParameters rp = to_runtime(init);
    FeatureExtractor fx(cfg.feature_seed, cfg.feat_channels);
    std::vector<Var> leaves = trainable_leaves(rp);
    static const char* kLeafNames[] = {"reduce_cf", "corr", "reduce_reg", "reg", "lambda0_raw",
                                       "wx1", "wh1", "b1", "wx2", "wh2", "b2", "proj_w", "proj_b"};

    Adam opt_model(cfg.lr_model);      // model init and raw initial rates
    Adam opt_updater(cfg.lr_optimizer);  // rate predictor

    std::ofstream log_file;
    if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw std::runtime_error("meta-train: cannot open log " + log_path);
        log_file << "iteration,meta_loss,update_loss,seconds\n";
    }

    MetaTrainResult out;
    const auto t0 = std::chrono::steady_clock::now();
    const double norm = 1.0 / static_cast<double>(cfg.batch_clips * cfg.updates);

    for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
        const int64_t epoch = iter / cfg.iters_per_epoch;
        opt_model.set_lr(decayed_lr(cfg.lr_model, epoch, cfg.decay_epochs, cfg.lr_decay));
        opt_updater.set_lr(decayed_lr(cfg.lr_optimizer, epoch, cfg.decay_epochs, cfg.lr_decay));

        std::vector<Tensor> accum;
        for (const Var& leaf : leaves) accum.emplace_back(leaf.shape());
        double meta_sum = 0.0, update_sum = 0.0;

        for (int64_t slot = 0; slot < cfg.batch_clips; ++slot) {
            const int64_t clip_index = iter * cfg.batch_clips + slot;
            Sequence clip = source(clip_index);
            Rng clip_rng = Rng(cfg.seed).fork(0x10000 + static_cast<uint64_t>(clip_index));
            ClipResult r = process_clip(clip, rp, fx, cfg, clip_rng);
            meta_sum += r.meta_loss;
            update_sum += r.update_loss;
            for (size_t i = 0; i < accum.size(); ++i)
                for (int64_t j = 0; j < accum[i].size(); ++j) accum[i][j] += r.grads[i][j];
        }

        const double meta_avg = meta_sum * norm, update_avg = update_sum * norm;
        if (!std::isfinite(meta_avg))
            throw std::runtime_error("meta-train: objective diverged at iteration " +
                                     std::to_string(iter) + " (value " +
                                     std::to_string(meta_avg) + "); lower the learning rates");

        for (size_t i = 0; i < leaves.size(); ++i)
            for (int64_t j = 0; j < accum[i].size(); ++j) accum[i][j] *= norm;

        // Optional global-norm cap. Rare clips blow up the unrolled gradient
        // by many orders of magnitude; one such step poisons the Adam second
        // moments for thousands of iterations, so the whole batch gradient is
        // rescaled once its joint norm exceeds the cap.
        if (cfg.grad_clip > 0.0) {
            double sq = 0.0;
            for (const Tensor& a : accum)
                for (int64_t j = 0; j < a.size(); ++j) sq += a[j] * a[j];
            const double gnorm = std::sqrt(sq);
            if (gnorm > cfg.grad_clip) {
                const double scale = cfg.grad_clip / gnorm;
                for (Tensor& a : accum)
                    for (int64_t j = 0; j < a.size(); ++j) a[j] *= scale;
            }
        }

        for (size_t i = 0; i < leaves.size(); ++i) {
            Tensor value = leaves[i].value();
            Adam& opt = i < 5 ? opt_model : opt_updater;
            opt.step(kLeafNames[i], value, accum[i]);
            leaves[i].bind(value);
        }

        LogRow row;
        row.iteration = iter;
        row.meta_loss = meta_avg;
        row.update_loss = update_avg;
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.log.push_back(row);
        if (log_file) {
            log_file << row.iteration << "," << std::setprecision(17) << row.meta_loss << ","
                     << row.update_loss << "," << std::setprecision(6) << row.seconds << "\n";
            log_file.flush();
        }

        if (!checkpoint_dir.empty() &&
            ((iter + 1) % cfg.checkpoint_every == 0 || iter + 1 == cfg.iterations)) {
            char name[48];
            std::snprintf(name, sizeof(name), "checkpoint_%06lld.mtck",
                          static_cast<long long>(iter + 1));
            save_checkpoint((std::filesystem::path(checkpoint_dir) / name).string(),
                            from_runtime(rp));
        }
    }

    out.params = from_runtime(rp);
    return out;
}

} // namespace metatrack

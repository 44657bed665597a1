#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "metatrack/meta_train.hpp"
#include "metatrack/tracker.hpp"

namespace metatrack {

struct RunRecord {
    std::vector<Box> predictions;  // one per frame; [0] echoes the given init box
    std::vector<Box> ground_truth;
    std::vector<UpdateEvent> events;
    double seconds = 0.0;
    bool diverged = false;  // estimate left the finite/valid range; box frozen there
};

inline RunRecord run_tracker(const Sequence& seq, const Config& cfg,
                             const ModelParameters& params, const FeatureExtractor& fx,
                             TrackerOptions options = {}) {
    if (seq.frames.empty() || seq.frames.size() != seq.boxes.size())
        throw std::invalid_argument("run_tracker: frames and boxes must align and be non-empty");
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.ground_truth = seq.boxes;
    rec.predictions.reserve(seq.frames.size());
    rec.predictions.push_back(seq.boxes[0]);

    TrackerSession session(cfg, params, fx, options);
    session.initialize(seq.frames[0], seq.boxes[0]);
    for (size_t t = 1; t < seq.frames.size(); ++t) {
        if (!rec.diverged) {
            // A tracker that loses the object badly enough can push its box
            // outside the search geometry, which the model layer rejects;
            // count that as divergence rather than aborting the experiment.
            try {
                const Box b = session.step(seq.frames[t]);
                if (!b.valid()) rec.diverged = true;
            } catch (const std::exception&) {
                rec.diverged = true;
            }
        }
        rec.predictions.push_back(rec.diverged ? rec.predictions.back()
                                               : session.current_box());
    }
    rec.events = session.update_events();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

// Per-frame overlap with the ground truth, skipping the init frame whose box
// is given, not predicted.
inline std::vector<double> iou_series(const RunRecord& rec) {
    std::vector<double> out;
    out.reserve(rec.predictions.size());
    for (size_t t = 1; t < rec.predictions.size(); ++t)
        out.push_back(iou(rec.predictions[t], rec.ground_truth[t]));
    return out;
}

inline std::vector<double> center_error_series(const RunRecord& rec) {
    std::vector<double> out;
    out.reserve(rec.predictions.size());
    for (size_t t = 1; t < rec.predictions.size(); ++t)
        out.push_back(center_distance(rec.predictions[t], rec.ground_truth[t]));
    return out;
}

inline double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_of: empty series");
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

// Area under the success curve: fraction of frames with overlap >= t,
// averaged over the 21 thresholds 0.00, 0.05, ..., 1.00. Perfect overlap on
// every frame scores exactly 1.
inline double success_auc(const std::vector<double>& ious) {
    if (ious.empty()) throw std::invalid_argument("success_auc: empty series");
    double acc = 0.0;
    for (int k = 0; k <= 20; ++k) {
        const double t = 0.05 * static_cast<double>(k);
        int64_t hits = 0;
        for (double v : ious)
            if (v >= t) ++hits;
        acc += static_cast<double>(hits) / static_cast<double>(ious.size());
    }
    return acc / 21.0;
}

// Fraction of frames whose center error is within `radius` pixels.
inline double precision_at(const std::vector<double>& center_errors, double radius = 20.0) {
    if (center_errors.empty()) throw std::invalid_argument("precision_at: empty series");
    int64_t hits = 0;
    for (double v : center_errors)
        if (v <= radius) ++hits;
    return static_cast<double>(hits) / static_cast<double>(center_errors.size());
}

// --- optimizer comparison ---------------------------------------------------------

struct CompareArm {
    std::string name;
    TrackerOptions options;
};

struct CompareRow {
    std::string arm;
    int64_t steps = 0;
    std::string metric;
    double value = 0.0;
};

// Runs every arm at every step budget over the same suite and reports
// long-format rows. All arms see identical sequences; randomness lives only
// in the suite itself, so the comparison is paired by construction.
inline std::vector<CompareRow> compare_optimizers(const std::vector<Sequence>& suite,
                                                  const Config& cfg,
                                                  const ModelParameters& params,
                                                  const std::vector<CompareArm>& arms,
                                                  const std::vector<int64_t>& step_budgets) {
    if (suite.empty()) throw std::invalid_argument("compare_optimizers: empty suite");
    FeatureExtractor fx(cfg.feature_seed, cfg.feat_channels);
    std::vector<CompareRow> rows;
    for (const auto& arm : arms)
        for (int64_t steps : step_budgets) {
            TrackerOptions opt = arm.options;
            opt.steps = steps;
            std::vector<double> ious, errors;
            double before = 0.0, after = 0.0;
            int64_t events = 0, diverged = 0;
            for (const Sequence& seq : suite) {
                RunRecord rec = run_tracker(seq, cfg, params, fx, opt);
                for (double v : iou_series(rec)) ious.push_back(v);
                for (double v : center_error_series(rec)) errors.push_back(v);
                for (const UpdateEvent& ev : rec.events) {
                    before += ev.loss_before;
                    after += ev.loss_after;
                    ++events;
                }
                if (rec.diverged) ++diverged;
            }
            auto push = [&rows, &arm, steps](const char* metric, double value) {
                rows.push_back(CompareRow{arm.name, steps, metric, value});
            };
            push("mean_iou", mean_of(ious));
            push("success_auc", success_auc(ious));
            push("precision_20", precision_at(errors));
            push("update_loss_before", events ? before / static_cast<double>(events) : 0.0);
            push("update_loss_after", events ? after / static_cast<double>(events) : 0.0);
            push("diverged_runs", static_cast<double>(diverged));
        }
    return rows;
}

inline void write_compare_csv(const std::string& path, const std::vector<CompareRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("compare: cannot open " + path + " for writing");
    out << "arm,steps,metric,value\n" << std::setprecision(17);
    for (const auto& r : rows)
        out << r.arm << "," << r.steps << "," << r.metric << "," << r.value << "\n";
    if (!out) throw std::runtime_error("compare: write failed for " + path);
}

// --- prediction files -------------------------------------------------------------

inline void write_boxes_csv(const std::string& path, const std::vector<Box>& boxes) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("boxes: cannot open " + path + " for writing");
    out << "frame,x,y,w,h\n" << std::setprecision(17);
    for (size_t i = 0; i < boxes.size(); ++i)
        out << i << "," << boxes[i].x << "," << boxes[i].y << "," << boxes[i].w << ","
            << boxes[i].h << "\n";
    if (!out) throw std::runtime_error("boxes: write failed for " + path);
}

inline std::vector<Box> read_boxes_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("boxes: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "frame,x,y,w,h")
        throw std::runtime_error("boxes: missing header in " + path);
    std::vector<Box> out;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::istringstream ls(line);
        double idx, x, y, w, h;
        char c;
        if (!(ls >> idx >> c >> x >> c >> y >> c >> w >> c >> h))
            throw std::runtime_error("boxes: bad row on line " + std::to_string(lineno) +
                                     " of " + path);
        out.push_back(Box{x, y, w, h});
    }
    if (out.empty()) throw std::runtime_error("boxes: no rows in " + path);
    return out;
}

} // namespace metatrack

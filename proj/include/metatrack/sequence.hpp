#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metatrack/config.hpp"
#include "metatrack/geometry.hpp"
#include "metatrack/image.hpp"
#include "metatrack/model.hpp"
#include "metatrack/rng.hpp"

namespace metatrack {

struct SyntheticConfig {
    int64_t frame_size = 128;
    int64_t length = 31;
    int64_t distractors = 2;
    std::string object_kind = "blob";  // rect | ellipse | blob
    double motion_sigma = 2.0;
    double scale_sigma = 0.02;
    double aspect_sigma = 0.01;
    double photometric_sigma = 0.01;
    double min_object = 16.0;
    double max_object = 48.0;
};

inline SyntheticConfig synth_from(const Config& cfg) {
    SyntheticConfig s;
    s.frame_size = cfg.frame_size;
    s.length = cfg.clip_length;
    s.distractors = cfg.distractors;
    s.object_kind = cfg.object_kind;
    s.motion_sigma = cfg.motion_sigma;
    s.scale_sigma = cfg.scale_sigma;
    s.aspect_sigma = cfg.aspect_sigma;
    s.photometric_sigma = cfg.photometric_sigma;
    s.min_object = cfg.min_object;
    s.max_object = cfg.max_object;
    return s;
}

struct Sequence {
    std::vector<Tensor> frames;  // [3,H,W] each, values quantized to k/255
    std::vector<Box> boxes;      // ground truth, frame coordinates
};

namespace detail {

// fold a value back into [lo, hi] by reflecting at the edges
inline double reflect_into(double v, double lo, double hi) {
    if (lo >= hi) return 0.5 * (lo + hi);
    const double span = hi - lo;
    while (v < lo || v > hi) {
        if (v < lo) v = lo + (lo - v);
        if (v > hi) v = hi - (v - hi);
        if (span <= 0) break;
    }
    return v;
}

struct BodyLook {
    double color[3];   // base color per channel
    double freq_u[3];  // texture frequencies in object coordinates
    double freq_v[3];
    double phase[3];
};

inline BodyLook random_look(Rng& rng) {
    BodyLook look{};
    for (int c = 0; c < 3; ++c) {
        look.color[c] = rng.uniform(0.45, 1.0);
        look.freq_u[c] = rng.uniform(1.0, 4.0);
        look.freq_v[c] = rng.uniform(1.0, 4.0);
        look.phase[c] = rng.uniform(0.0, 6.283185307179586);
    }
    return look;
}

struct BodyState {
    double cx, cy;
    double log_size;
    double log_aspect;
};

// Fractional pixel coverage of box `b` over pixel (x, y); exact for
// axis-aligned rectangles.
inline double rect_coverage(const Box& b, int64_t x, int64_t y) {
    const double ox = std::min(b.x + b.w, static_cast<double>(x) + 1.0) -
                      std::max(b.x, static_cast<double>(x));
    const double oy = std::min(b.y + b.h, static_cast<double>(y) + 1.0) -
                      std::max(b.y, static_cast<double>(y));
    if (ox <= 0 || oy <= 0) return 0.0;
    return ox * oy;
}

// 3x3 subsample coverage of the ellipse inscribed in `b`.
inline double ellipse_coverage(const Box& b, int64_t x, int64_t y) {
    const double rx = 0.5 * b.w, ry = 0.5 * b.h;
    int hits = 0;
    for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
            const double px = static_cast<double>(x) + (sx + 0.5) / 3.0;
            const double py = static_cast<double>(y) + (sy + 0.5) / 3.0;
            const double du = (px - b.cx()) / rx, dv = (py - b.cy()) / ry;
            if (du * du + dv * dv <= 1.0) ++hits;
        }
    return static_cast<double>(hits) / 9.0;
}

// Paints one body over the frame. Texture coordinates follow the box, so
// the pattern translates and stretches with the object.
inline void paint_body(Tensor& frame, const Box& b, const BodyLook& look,
                       const std::string& kind, double brightness) {
    const int64_t H = frame.dim(1), W = frame.dim(2);
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.x)));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.y)));
    const int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::ceil(b.x + b.w)));
    const int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::ceil(b.y + b.h)));
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
            const double cov = kind == "rect" ? rect_coverage(b, x, y)
                                              : ellipse_coverage(b, x, y);
            if (cov <= 0.0) continue;
            const double u = (static_cast<double>(x) + 0.5 - b.x) / b.w;
            const double v = (static_cast<double>(y) + 0.5 - b.y) / b.h;
            for (int c = 0; c < 3; ++c) {
                double col = look.color[c];
                if (kind == "blob")
                    col *= 0.75 + 0.25 * std::sin(6.283185307179586 *
                                                      (look.freq_u[c] * u + look.freq_v[c] * v) +
                                                  look.phase[c]);
                col *= brightness;
                double& px = frame[(c * H + y) * W + x];
                px = (1.0 - cov) * px + cov * col;
            }
        }
}

inline Box body_box(const BodyState& s) {
    const double size = std::exp(s.log_size), a = std::exp(s.log_aspect);
    return Box::from_center(s.cx, s.cy, size * a, size / a);
}

inline void clamp_center(BodyState& s, int64_t frame_size) {
    const Box b = body_box(s);
    const double margin = 2.0;
    s.cx = reflect_into(s.cx, 0.5 * b.w + margin, static_cast<double>(frame_size) - 0.5 * b.w - margin);
    s.cy = reflect_into(s.cy, 0.5 * b.h + margin, static_cast<double>(frame_size) - 0.5 * b.h - margin);
}

inline void quantize_frame(Tensor& frame) {
    for (int64_t i = 0; i < frame.size(); ++i) {
        const double c = std::clamp(frame[i], 0.0, 1.0);
        frame[i] = std::round(c * 255.0) / 255.0;
    }
}

} // namespace detail

// Renders a clip: a smoothly drifting textured target over a static
// low-frequency background, with optional non-overlapping distractor bodies.
// Frames come back already quantized to 8-bit levels, so saving to disk and
// loading back reproduces them exactly. Same seed, same clip, bit for bit.
inline Sequence generate_sequence(const SyntheticConfig& sc, uint64_t seed) {
    if (sc.frame_size < 32) throw std::invalid_argument("generate_sequence: frame too small");
    if (sc.length < 1) throw std::invalid_argument("generate_sequence: empty clip");
    if (sc.object_kind != "rect" && sc.object_kind != "ellipse" && sc.object_kind != "blob")
        throw std::invalid_argument("generate_sequence: unknown object kind " + sc.object_kind);
    if (!(sc.min_object >= 4.0) || !(sc.max_object >= sc.min_object))
        throw std::invalid_argument("generate_sequence: bad object size range");

    Rng rng(seed);
    const int64_t F = sc.frame_size;

    // static background: dim base color plus three low-frequency waves
    Tensor background({3, F, F});
    for (int c = 0; c < 3; ++c) {
        const double base = rng.uniform(0.05, 0.3);
        const double amp = rng.uniform(0.02, 0.08);
        const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
        const double ph = rng.uniform(0.0, 6.283185307179586);
        for (int64_t y = 0; y < F; ++y)
            for (int64_t x = 0; x < F; ++x)
                background[(c * F + y) * F + x] =
                    base + amp * std::sin(6.283185307179586 *
                                              (fx * x + fy * y) / static_cast<double>(F) +
                                          ph);
    }

    detail::BodyLook target_look = detail::random_look(rng);
    detail::BodyState target{};
    target.log_size = rng.uniform(std::log(sc.min_object), std::log(sc.max_object));
    target.log_aspect = rng.uniform(-0.2, 0.2);
    target.cx = rng.uniform(0.3 * F, 0.7 * F);
    target.cy = rng.uniform(0.3 * F, 0.7 * F);
    detail::clamp_center(target, F);
    double brightness = 1.0;

    std::vector<detail::BodyLook> dlooks;
    std::vector<detail::BodyState> dstates;
    for (int64_t d = 0; d < sc.distractors; ++d) {
        dlooks.push_back(detail::random_look(rng));
        detail::BodyState s{};
        s.log_size = rng.uniform(std::log(sc.min_object), std::log(sc.max_object) * 0.9);
        s.log_aspect = rng.uniform(-0.2, 0.2);
        // spawn away from the target
        do {
            s.cx = rng.uniform(0.1 * F, 0.9 * F);
            s.cy = rng.uniform(0.1 * F, 0.9 * F);
        } while (std::abs(s.cx - target.cx) < 0.3 * F && std::abs(s.cy - target.cy) < 0.3 * F);
        detail::clamp_center(s, F);
        dstates.push_back(s);
    }

    auto too_close = [&](const detail::BodyState& s) {
        const Box a = detail::body_box(s), b = detail::body_box(target);
        return std::abs(a.cx() - b.cx()) < 0.5 * (a.w + b.w) + 4.0 &&
               std::abs(a.cy() - b.cy()) < 0.5 * (a.h + b.h) + 4.0;
    };

    Sequence seq;
    seq.frames.reserve(static_cast<size_t>(sc.length));
    seq.boxes.reserve(static_cast<size_t>(sc.length));
    for (int64_t t = 0; t < sc.length; ++t) {
        const Box gt = detail::body_box(target);
        Tensor frame = background;
        for (int64_t d = 0; d < sc.distractors; ++d)
            detail::paint_body(frame, detail::body_box(dstates[static_cast<size_t>(d)]),
                               dlooks[static_cast<size_t>(d)], sc.object_kind, 1.0);
        detail::paint_body(frame, gt, target_look, sc.object_kind, brightness);
        detail::quantize_frame(frame);
        seq.frames.push_back(std::move(frame));
        seq.boxes.push_back(gt);

        // advance the world state for the next frame
        target.cx += rng.normal(0.0, sc.motion_sigma);
        target.cy += rng.normal(0.0, sc.motion_sigma);
        target.log_size = detail::reflect_into(target.log_size + rng.normal(0.0, sc.scale_sigma),
                                               std::log(sc.min_object), std::log(sc.max_object));
        target.log_aspect =
            detail::reflect_into(target.log_aspect + rng.normal(0.0, sc.aspect_sigma), -0.3, 0.3);
        detail::clamp_center(target, F);
        brightness = detail::reflect_into(brightness + rng.normal(0.0, sc.photometric_sigma),
                                          0.75, 1.3);
        for (auto& s : dstates) {
            const detail::BodyState before = s;
            s.cx += rng.normal(0.0, sc.motion_sigma);
            s.cy += rng.normal(0.0, sc.motion_sigma);
            detail::clamp_center(s, F);
            if (too_close(s)) s = before;  // distractors never cover the target
        }
    }
    return seq;
}

// --- disk layout: <dir>/img/0001.png ... plus <dir>/groundtruth.txt -------------

inline void save_sequence(const Sequence& seq, const std::string& dir) {
    if (seq.frames.empty() || seq.frames.size() != seq.boxes.size())
        throw std::invalid_argument("save_sequence: frames and boxes must align and be non-empty");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "img", ec);
    if (ec) throw std::runtime_error("save_sequence: cannot create " + dir + ": " + ec.message());

    std::ofstream gt(fs::path(dir) / "groundtruth.txt");
    if (!gt) throw std::runtime_error("save_sequence: cannot write ground truth in " + dir);
    gt << std::setprecision(17);
    char name[16];
    for (size_t i = 0; i < seq.frames.size(); ++i) {
        std::snprintf(name, sizeof(name), "%04zu.png", i + 1);
        save_png((fs::path(dir) / "img" / name).string(), seq.frames[i]);
        const Box& b = seq.boxes[i];
        gt << b.x << "," << b.y << "," << b.w << "," << b.h << "\n";
    }
    if (!gt) throw std::runtime_error("save_sequence: ground truth write failed in " + dir);
}

// Ground truth alone, without decoding any frames.
inline std::vector<Box> load_ground_truth(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream gt(fs::path(dir) / "groundtruth.txt");
    if (!gt) throw std::runtime_error("load_ground_truth: missing groundtruth.txt in " + dir);
    std::vector<Box> boxes;
    std::string line;
    size_t lineno = 0;
    while (std::getline(gt, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::istringstream ls(line);
        double v[4];
        char comma;
        if (!(ls >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3]))
            throw std::runtime_error("load_ground_truth: bad box on line " +
                                     std::to_string(lineno) + " of " + dir + "/groundtruth.txt");
        Box b{v[0], v[1], v[2], v[3]};
        require_valid(b, "load_ground_truth");
        boxes.push_back(b);
    }
    if (boxes.empty())
        throw std::runtime_error("load_ground_truth: no boxes in " + dir + "/groundtruth.txt");
    return boxes;
}

inline Sequence load_sequence(const std::string& dir) {
    namespace fs = std::filesystem;
    Sequence seq;
    seq.boxes = load_ground_truth(dir);

    char name[16];
    for (size_t i = 0; i < seq.boxes.size(); ++i) {
        std::snprintf(name, sizeof(name), "%04zu.png", i + 1);
        seq.frames.push_back(load_image((fs::path(dir) / "img" / name).string()));
        if (i > 0 && !seq.frames[i].same_shape(seq.frames[0]))
            throw std::runtime_error("load_sequence: frame size changes at " +
                                     std::string(name) + " in " + dir);
    }
    return seq;
}

// --- update batches --------------------------------------------------------------

// One tracked frame as the updater sees it: features of its search patch and
// the object box in that patch's coordinates (ground truth offline, the
// tracker's own prediction online).
struct FrameSample {
    Tensor features;
    Box box_patch;
};

// Labels the most recent `window` history entries (all of them when history
// is shorter) against one shared filter geometry.
inline std::vector<TrainingSample> build_update_batch(const std::vector<FrameSample>& history,
                                                      int64_t window, const FilterShape& fs,
                                                      double alpha, double cell) {
    if (history.empty()) throw std::invalid_argument("build_update_batch: empty history");
    if (window < 1) throw std::invalid_argument("build_update_batch: positive window required");
    const size_t take = std::min<size_t>(static_cast<size_t>(window), history.size());
    std::vector<TrainingSample> batch;
    batch.reserve(take);
    for (size_t i = history.size() - take; i < history.size(); ++i)
        batch.push_back(make_training_sample(history[i].features, history[i].box_patch, fs,
                                             alpha, cell));
    return batch;
}

} // namespace metatrack

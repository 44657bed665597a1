#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metatrack {

// Axis-aligned box, top-left corner plus size, in pixel units. A pixel at
// index p covers the interval [p, p+1), so a box starting at x covers the
// left edge of pixel x and its center sits at x + w/2 in continuous
// coordinates.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }

    static Box from_center(double cx, double cy, double w, double h) {
        return {cx - 0.5 * w, cy - 0.5 * h, w, h};
    }

    bool valid() const {
        return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y) &&
               std::isfinite(w) && std::isfinite(h);
    }
};

inline void require_valid(const Box& b, const char* who) {
    if (!b.valid())
        throw std::invalid_argument(std::string(who) + ": degenerate box");
}

inline double iou(const Box& a, const Box& b) {
    require_valid(a, "iou");
    require_valid(b, "iou");
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_distance(const Box& a, const Box& b) {
    const double dx = a.cx() - b.cx();
    const double dy = a.cy() - b.cy();
    return std::sqrt(dx * dx + dy * dy);
}

} // namespace metatrack

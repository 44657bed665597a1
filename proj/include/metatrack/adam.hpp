#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "metatrack/tensor.hpp"

namespace metatrack {

// Value-level Adam for the outer training loop. One instance per parameter
// group (groups differ only in base learning rate); moment slots are created
// lazily per key on first use.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    void step(const std::string& key, Tensor& param, const Tensor& grad) {
        if (!param.same_shape(grad))
            throw std::invalid_argument("Adam::step: gradient shape mismatch for " + key);
        Slot& s = slots_.try_emplace(key, Slot{Tensor(param.shape()), Tensor(param.shape()), 0})
                      .first->second;
        if (!s.m.same_shape(param))
            throw std::invalid_argument("Adam::step: parameter shape changed for " + key);
        s.t += 1;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
        for (int64_t i = 0; i < param.size(); ++i) {
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * grad[i];
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            param[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }

private:
    struct Slot {
        Tensor m, v;
        int64_t t;
    };
    double lr_, beta1_, beta2_, eps_;
    std::map<std::string, Slot> slots_;
};

// Step decay: multiply the base rate by `factor` once per `every` completed
// epochs. Used as lr = decayed_lr(base, epoch, 5, 0.5).
inline double decayed_lr(double base, int64_t epoch, int64_t every, double factor) {
    if (every < 1) throw std::invalid_argument("decayed_lr: positive period required");
    return base * std::pow(factor, static_cast<double>(epoch / every));
}

} // namespace metatrack

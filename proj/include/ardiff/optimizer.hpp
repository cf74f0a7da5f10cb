#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ardiff/backbone.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/mat.hpp"

namespace ardiff {

// Warmup–stable–decay: linear 0->peak over the warmup span, flat peak, then
// linear peak->0 over the trailing decay span.
inline double wsd_lr(int64_t step, int64_t total, double peak, double warmup_frac,
                     double decay_frac) {
    if (step < 0 || step > total) throw InvalidRange("wsd_lr: step outside [0, total]");
    if (warmup_frac < 0 || decay_frac < 0 || warmup_frac + decay_frac > 1.0)
        throw InvalidRange("wsd_lr: fractions must be nonnegative and sum to <= 1");
    const auto warm = static_cast<int64_t>(std::llround(warmup_frac * static_cast<double>(total)));
    const auto decay = static_cast<int64_t>(std::llround(decay_frac * static_cast<double>(total)));
    if (warm > 0 && step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
    if (decay > 0 && step > total - decay)
        return peak * static_cast<double>(total - step) / static_cast<double>(decay);
    return peak;
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Mat> m, v;
    int64_t step = 0;
};

inline AdamState make_adam_state(const ParamStore& params) {
    AdamState s;
    s.m.reserve(params.count());
    s.v.reserve(params.count());
    for (const Mat& p : params.values) {
        s.m.emplace_back(p.rows, p.cols);
        s.v.emplace_back(p.rows, p.cols);
    }
    return s;
}

inline double grad_norm(const std::vector<Mat>& grads) {
    double sq = 0.0;
    for (const Mat& g : grads)
        for (double x : g.v) sq += x * x;
    return std::sqrt(sq);
}

// Scales gradients in place so their global norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_gradients(std::vector<Mat>& grads, double max_norm) {
    const double norm = grad_norm(grads);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (Mat& g : grads)
            for (double& x : g.v) x *= s;
    }
    return norm;
}

// Decoupled weight decay: the decay multiplies the parameter directly and is
// not routed through the adaptive moments.
inline void adamw_step(ParamStore& params, const std::vector<Mat>& grads, AdamState& state,
                       double lr, double weight_decay, const AdamConfig& cfg = {}) {
    if (grads.size() != params.count()) throw ShapeMismatch("adamw_step: gradient table size");
    for (size_t i = 0; i < grads.size(); ++i) {
        require_same_shape(grads[i], params.values[i], "adamw_step gradient");
        if (!grads[i].all_finite())
            throw NonFiniteGradient("non-finite gradient in " + params.names[i]);
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < grads.size(); ++i) {
        Mat& p = params.values[i];
        Mat& m = state.m[i];
        Mat& v = state.v[i];
        const Mat& g = grads[i];
        for (size_t j = 0; j < p.v.size(); ++j) {
            m.v[j] = cfg.beta1 * m.v[j] + (1.0 - cfg.beta1) * g.v[j];
            v.v[j] = cfg.beta2 * v.v[j] + (1.0 - cfg.beta2) * g.v[j] * g.v[j];
            const double mhat = m.v[j] / bc1;
            const double vhat = v.v[j] / bc2;
            p.v[j] -= lr * weight_decay * p.v[j];
            p.v[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

inline void ema_update(ParamStore& ema, const ParamStore& params, double decay) {
    if (ema.count() != params.count()) throw ShapeMismatch("ema_update: table size");
    for (size_t i = 0; i < params.count(); ++i) {
        if (ema.names[i] != params.names[i]) throw ShapeMismatch("ema_update: name order");
        require_same_shape(ema.values[i], params.values[i], "ema_update");
        for (size_t j = 0; j < ema.values[i].v.size(); ++j) {
            ema.values[i].v[j] =
                decay * ema.values[i].v[j] + (1.0 - decay) * params.values[i].v[j];
        }
    }
}

}  // namespace ardiff

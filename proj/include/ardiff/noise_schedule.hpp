#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ardiff/errors.hpp"
#include "ardiff/mat.hpp"

namespace ardiff {

// DDPM forward-process schedule. Timesteps are 1-based; alpha_bar[0] == 1 is
// the clean-data sentinel, which makes the terminal DDIM transition exact.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] is the step-t variance
    std::vector<double> alpha_bar;  // length T+1, alpha_bar[0] == 1
    std::vector<double> sigma;      // posterior std; housed, unused at eta = 0
};

inline NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1 || beta_start <= 0.0 || beta_end >= 1.0 || beta_start > beta_end) {
        throw InvalidRange("linear_schedule: need 0 < beta_start <= beta_end < 1, T >= 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T + 1);
    s.sigma.resize(T);
    s.alpha_bar[0] = 1.0;
    for (int i = 0; i < T; ++i) {
        s.beta[i] = (T == 1) ? beta_start
                             : beta_start + (beta_end - beta_start) * i / (T - 1);
        s.alpha_bar[i + 1] = s.alpha_bar[i] * (1.0 - s.beta[i]);
        const double prev = s.alpha_bar[i], cur = s.alpha_bar[i + 1];
        s.sigma[i] = std::sqrt((1.0 - prev) / (1.0 - cur) * s.beta[i]);
    }
    return s;
}

struct NoisyLatent {
    Mat x_t;
    int t = 0;
    Mat eps;  // the Gaussian draw used, retained for tests
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline NoisyLatent noising(const Mat& x0, int t, const Mat& eps, const NoiseSchedule& s) {
    if (t < 1 || t > s.T) {
        throw TimestepOutOfRange("noising: t = " + std::to_string(t));
    }
    require_same_shape(x0, eps, "noising");
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    NoisyLatent out;
    out.t = t;
    out.eps = eps;
    out.x_t = Mat(x0.rows, x0.cols);
    for (size_t i = 0; i < x0.v.size(); ++i) out.x_t.v[i] = a * x0.v[i] + b * eps.v[i];
    return out;
}

// Deterministic DDIM step (eta = 0) under sample prediction: recover the
// implied noise from x0_hat, then re-noise to t_prev. t_prev = 0 returns
// x0_hat exactly because alpha_bar[0] == 1.
inline Mat ddim_step(const Mat& x_t, const Mat& x0_hat, int t, int t_prev,
                     const NoiseSchedule& s) {
    if (!(0 <= t_prev && t_prev < t && t <= s.T)) {
        throw TimestepOrder("ddim_step: need 0 <= t_prev < t <= T, got t = " +
                            std::to_string(t) + ", t_prev = " + std::to_string(t_prev));
    }
    require_same_shape(x_t, x0_hat, "ddim_step");
    const double abar_t = s.alpha_bar[t];
    const double abar_p = s.alpha_bar[t_prev];
    const double one_minus = 1.0 - abar_t;
    const double sa_t = std::sqrt(abar_t), sa_p = std::sqrt(abar_p);
    const double sb_t = std::sqrt(one_minus), sb_p = std::sqrt(1.0 - abar_p);
    Mat out(x_t.rows, x_t.cols);
    for (size_t i = 0; i < x_t.v.size(); ++i) {
        // guard the t -> 0 singularity
        const double eps_hat =
            (one_minus < 1e-12) ? 0.0 : (x_t.v[i] - sa_t * x0_hat.v[i]) / sb_t;
        out.v[i] = sa_p * x0_hat.v[i] + sb_p * eps_hat;
    }
    return out;
}

// Evenly strided descending timesteps starting at T; the caller's final
// transition targets t_prev = 0.
inline std::vector<int> spacing(int T, int num_inference_steps) {
    if (num_inference_steps < 1 || num_inference_steps > T) {
        throw InvalidCount("spacing: need 1 <= steps <= T");
    }
    std::vector<int> out(num_inference_steps);
    for (int k = 0; k < num_inference_steps; ++k) {
        out[k] = T - static_cast<int>((static_cast<long long>(k) * T) / num_inference_steps);
    }
    return out;
}

}  // namespace ardiff

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ardiff/errors.hpp"
#include "ardiff/layout.hpp"
#include "ardiff/mat.hpp"
#include "ardiff/rng.hpp"

namespace ardiff {

// Class-conditioned correlated Gaussian latents. Every token value is
//   anchor[class] + block-mean chain + smoothed texture + noise floor,
// where the chain makes each block's mean depend on its predecessor (so AR
// conditioning has something to learn) and the texture correlation length
// controls in-block smoothness. corr = 0 turns both couplings off.
struct SyntheticSpec {
    int grid_h = 4, grid_w = 4;
    int channels = 4;
    int ar_length = 4;
    int n_classes = 4;
    double corr = 1.0;          // correlation length; 0 -> i.i.d. tokens/blocks
    double noise_floor = 0.05;  // i.i.d. residual noise
    double anchor_scale = 1.0;  // class-mean spread
    double chain_scale = 0.6;   // block-mean chain amplitude
    double texture_scale = 0.5;

    void validate(int vocab) const {
        if (grid_h < 1 || grid_w < 1 || channels < 1) throw ConfigError("data dims must be >= 1");
        if (n_classes < 1) throw ConfigError("data.n_classes must be >= 1");
        if (n_classes > vocab - 2)
            throw ConfigError("data.n_classes must leave room for the two delimiter ids");
        if (corr < 0 || noise_floor < 0) throw ConfigError("data.corr/noise_floor must be >= 0");
        build_block_layout(grid_h, grid_w, ar_length);
    }
};

struct Example {
    int class_id = 0;
    std::vector<int> text_ids;  // the class id as a one-token prompt
    Mat grid;                   // (grid_h*grid_w, channels), raster token order
};

// Per-class anchor vector, fixed for a given seed (step-independent).
inline std::vector<double> class_anchor(const SyntheticSpec& spec, uint64_t seed, int class_id) {
    RngStream s(seed, RngRole::BatchClass, 0, static_cast<uint64_t>(class_id));
    std::vector<double> a(spec.channels);
    for (int c = 0; c < spec.channels; ++c) a[c] = spec.anchor_scale * s.normal(c);
    return a;
}

namespace detail {
// Box blur over the token grid with clamped borders; radius 0 is identity.
inline Mat box_blur(const Mat& field, int H, int W, int radius) {
    if (radius <= 0) return field;
    Mat out(field.rows, field.cols);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int y0 = std::max(0, y - radius), y1 = std::min(H - 1, y + radius);
            const int x0 = std::max(0, x - radius), x1 = std::min(W - 1, x + radius);
            const double inv = 1.0 / ((y1 - y0 + 1) * (x1 - x0 + 1));
            double* orow = out.row_ptr(y * W + x);
            for (int yy = y0; yy <= y1; ++yy) {
                for (int xx = x0; xx <= x1; ++xx) {
                    const double* irow = field.row_ptr(yy * W + xx);
                    for (int c = 0; c < field.cols; ++c) orow[c] += irow[c];
                }
            }
            for (int c = 0; c < field.cols; ++c) orow[c] *= inv;
        }
    }
    return out;
}
}  // namespace detail

// One example, fully determined by (seed, step, lane). Steps used by the
// trainer start at 1; step 0 is reserved for the class anchors. The anchors
// are the dataset's identity, so held-out draws pass the training seed as
// anchor_seed while drawing everything else from their own stream.
inline Example generate_example(const SyntheticSpec& spec, uint64_t seed, uint64_t step,
                                uint64_t lane, uint64_t anchor_seed) {
    const BlockLayout layout = build_block_layout(spec.grid_h, spec.grid_w, spec.ar_length);
    Example ex;
    RngStream cls(seed, RngRole::BatchClass, step + 1, lane);
    ex.class_id = static_cast<int>(cls.uniform_int(0, static_cast<uint64_t>(spec.n_classes)));
    ex.text_ids = {ex.class_id};

    const std::vector<double> anchor = class_anchor(spec, anchor_seed, ex.class_id);

    // Block-mean chain: deviations follow an AR(1) process with coefficient
    // exp(-1/corr), stationary variance chain_scale^2.
    const double a = spec.corr > 0 ? std::exp(-1.0 / spec.corr) : 0.0;
    RngStream chain(seed, RngRole::BatchChain, step + 1, lane);
    std::vector<std::vector<double>> mean(spec.ar_length, std::vector<double>(spec.channels));
    for (int i = 0; i < spec.ar_length; ++i) {
        for (int c = 0; c < spec.channels; ++c) {
            const double xi = chain.normal(static_cast<uint64_t>(i) * spec.channels + c);
            const double prev = i == 0 ? 0.0 : mean[i - 1][c] - anchor[c];
            const double dev = i == 0 ? spec.chain_scale * xi
                                      : a * prev + spec.chain_scale * std::sqrt(1.0 - a * a) * xi;
            mean[i][c] = anchor[c] + dev;
        }
    }

    RngStream tex(seed, RngRole::BatchTexture, step + 1, lane);
    Mat field(spec.grid_h * spec.grid_w, spec.channels);
    tex.fill_normal(field);
    field = detail::box_blur(field, spec.grid_h, spec.grid_w,
                             static_cast<int>(std::floor(spec.corr)));

    RngStream floor_rng(seed, RngRole::BatchFloor, step + 1, lane);
    ex.grid = Mat(spec.grid_h * spec.grid_w, spec.channels);
    for (int y = 0; y < spec.grid_h; ++y) {
        for (int x = 0; x < spec.grid_w; ++x) {
            const int tok = y * spec.grid_w + x;
            const int block = (y / layout.block_h) * layout.blocks_x + (x / layout.block_w);
            double* row = ex.grid.row_ptr(tok);
            for (int c = 0; c < spec.channels; ++c) {
                const double eta = floor_rng.normal(static_cast<uint64_t>(tok) * spec.channels + c);
                row[c] = mean[block][c] + spec.texture_scale * field(tok, c) +
                         spec.noise_floor * eta;
            }
        }
    }
    return ex;
}

inline Example generate_example(const SyntheticSpec& spec, uint64_t seed, uint64_t step,
                                uint64_t lane) {
    return generate_example(spec, seed, step, lane, seed);
}

inline std::vector<Example> generate_batch(const SyntheticSpec& spec, uint64_t seed,
                                           uint64_t step, int batch_size) {
    std::vector<Example> out;
    out.reserve(batch_size);
    for (int lane = 0; lane < batch_size; ++lane)
        out.push_back(generate_example(spec, seed, step, static_cast<uint64_t>(lane)));
    return out;
}

// Held-out draws come from a derived seed so they never collide with any
// training step.
inline uint64_t holdout_seed(uint64_t seed) {
    return detail::splitmix64(seed ^ static_cast<uint64_t>(RngRole::Holdout));
}

}  // namespace ardiff

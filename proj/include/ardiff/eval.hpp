#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "ardiff/backbone.hpp"
#include "ardiff/frechet.hpp"
#include "ardiff/noise_schedule.hpp"
#include "ardiff/objectives.hpp"
#include "ardiff/sampler.hpp"
#include "ardiff/synthetic.hpp"
#include "ardiff/tape.hpp"
#include "ardiff/trainer.hpp"

namespace ardiff {

struct EvalConfig {
    int holdout_count = 128;  // held-out examples for reference stats and recon
    int gen_count = 32;       // generated samples for the Fréchet metric
    uint64_t seed = 1;        // holdout streams derive from holdout_seed(seed)

    void validate() const {
        if (holdout_count < 2) throw ConfigError("eval.holdout_count must be >= 2");
        if (gen_count < 2) throw ConfigError("eval.gen_count must be >= 2");
    }
};

struct EvalReport {
    double recon_mse = 0.0;     // teacher-forced denoising MSE on held-out data
    double baseline_mse = 0.0;  // unconditional per-position mean predictor
    double frechet = 0.0;       // generated vs held-out latent statistics
    NfeLedger ledger;           // per-image inference cost
    int holdout_count = 0;
    int gen_count = 0;
};

// Held-out examples: fresh draws from the training dataset (same class
// anchors), indexed reproducibly and disjoint from every training stream.
inline std::vector<Example> holdout_examples(const SyntheticSpec& spec, uint64_t seed, int count) {
    const uint64_t hseed = holdout_seed(seed);
    std::vector<Example> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(generate_example(spec, hseed, static_cast<uint64_t>(i), 0, seed));
    return out;
}

// One row per example: the grid flattened token-major.
inline Mat flatten_latents(const std::vector<Example>& examples) {
    if (examples.empty()) throw InvalidCount("no examples to flatten");
    const Mat& g0 = examples.front().grid;
    Mat out(static_cast<int>(examples.size()), g0.rows * g0.cols);
    for (size_t i = 0; i < examples.size(); ++i) {
        require_same_shape(examples[i].grid, g0, "holdout grid");
        std::copy(examples[i].grid.v.begin(), examples[i].grid.v.end(),
                  out.row_ptr(static_cast<int>(i)));
    }
    return out;
}

inline Mat flatten_grids(const std::vector<Mat>& grids) {
    if (grids.empty()) throw InvalidCount("no grids to flatten");
    Mat out(static_cast<int>(grids.size()), grids.front().rows * grids.front().cols);
    for (size_t i = 0; i < grids.size(); ++i) {
        require_same_shape(grids[i], grids.front(), "generated grid");
        std::copy(grids[i].v.begin(), grids[i].v.end(), out.row_ptr(static_cast<int>(i)));
    }
    return out;
}

inline FrechetStats reference_stats(const SyntheticSpec& spec, uint64_t seed, int count) {
    return fit_stats(flatten_latents(holdout_examples(spec, seed, count)));
}

// Teacher-forced denoising MSE: each held-out example is noised at held-out
// timesteps and the model's clean-sample prediction is scored against truth.
inline double eval_recon_mse(const ModelConfig& cfg, const ParamStore& params,
                             const NoiseSchedule& schedule, const SyntheticSpec& spec,
                             uint64_t seed, int count) {
    // The model's block partition (cfg.ar_length) may differ from the chain
    // structure the data was drawn with (spec.ar_length).
    const BlockLayout layout = build_block_layout(spec.grid_h, spec.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(layout, 1, cfg.clean_blocks);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    const MaskPtr mask_view = std::make_shared<BoolMat>(full_mask_view(mask));
    const uint64_t hseed = holdout_seed(seed);
    const std::vector<Example> examples = holdout_examples(spec, seed, count);

    LossWeights image_only;
    image_only.text = 0.0;
    image_only.image = 1.0;
    image_only.hidden = 0.0;
    image_only.tower = 0.0;

    double total = 0.0;
    for (int i = 0; i < count; ++i) {
        const PreparedSample ps = prepare_sample(examples[i], layout, plan, cfg, schedule, hseed,
                                                 static_cast<uint64_t>(i), 0);
        Tape tape;
        const BoundParams bound = bind_params(tape, params, false);
        const ForwardOutputs fwd = full_forward(tape, bound, cfg, plan, ps.batch, mask_view);
        LossReport report;
        total_loss(tape, fwd, plan, cfg, ps.truth, image_only, &report);
        total += report.image_mse;
    }
    return total / count;
}

// Baseline the recon MSE must beat: predict every position by its mean over
// the held-out set, scored on the same examples.
inline double mean_predictor_mse(const std::vector<Example>& examples) {
    if (examples.size() < 2) throw InvalidCount("mean predictor needs >= 2 examples");
    const Mat& g0 = examples.front().grid;
    Mat mean(g0.rows, g0.cols);
    for (const Example& ex : examples)
        for (size_t k = 0; k < mean.v.size(); ++k) mean.v[k] += ex.grid.v[k];
    const double inv_n = 1.0 / static_cast<double>(examples.size());
    for (double& x : mean.v) x *= inv_n;
    double se = 0.0;
    for (const Example& ex : examples)
        for (size_t k = 0; k < mean.v.size(); ++k) {
            const double d = ex.grid.v[k] - mean.v[k];
            se += d * d;
        }
    return se / (static_cast<double>(examples.size()) * static_cast<double>(mean.v.size()));
}

// Generates `count` grids with class prompts cycling 0..n_classes-1.
inline std::vector<Mat> generate_latents(const ModelConfig& cfg, const ParamStore& params,
                                         const SamplerConfig& scfg, const NoiseSchedule& schedule,
                                         const SyntheticSpec& spec, int count,
                                         NfeLedger* ledger = nullptr) {
    const BlockLayout layout = build_block_layout(spec.grid_h, spec.grid_w, cfg.ar_length);
    std::vector<Mat> grids;
    grids.reserve(count);
    for (int j = 0; j < count; ++j) {
        const std::vector<int> prompt{j % spec.n_classes};
        ModelDenoiser denoiser(cfg, params, layout, scfg, prompt);
        GenerateResult res = generate(denoiser, cfg, scfg, schedule, layout,
                                      static_cast<uint64_t>(j));
        if (ledger && j == 0) *ledger = res.ledger;  // identical per sample
        grids.push_back(std::move(res.grid));
    }
    return grids;
}

inline EvalReport eval_model(const ModelConfig& cfg, const ParamStore& params,
                             const SamplerConfig& scfg, const NoiseSchedule& schedule,
                             const SyntheticSpec& spec, const EvalConfig& ecfg) {
    ecfg.validate();
    EvalReport rep;
    rep.holdout_count = ecfg.holdout_count;
    rep.gen_count = ecfg.gen_count;

    const std::vector<Example> holdout = holdout_examples(spec, ecfg.seed, ecfg.holdout_count);
    rep.baseline_mse = mean_predictor_mse(holdout);
    rep.recon_mse = eval_recon_mse(cfg, params, schedule, spec, ecfg.seed, ecfg.holdout_count);

    const FrechetStats ref = fit_stats(flatten_latents(holdout));
    const std::vector<Mat> gen =
        generate_latents(cfg, params, scfg, schedule, spec, ecfg.gen_count, &rep.ledger);
    rep.frechet = frechet_distance(fit_stats(flatten_grids(gen)), ref);
    return rep;
}

inline constexpr const char* kEvalHeader =
    "holdout_count,gen_count,recon_mse,baseline_mse,frechet,raw_nfe,layer_weighted_nfe";

inline void write_eval_csv(const std::string& path, const EvalReport& rep) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open for write: " + path);
    f << kEvalHeader << "\n"
      << rep.holdout_count << ',' << rep.gen_count << ','
      << detail::format_metric(rep.recon_mse) << ',' << detail::format_metric(rep.baseline_mse)
      << ',' << detail::format_metric(rep.frechet) << ',' << rep.ledger.raw_passes() << ','
      << detail::format_metric(rep.ledger.layer_weighted()) << "\n";
    if (!f) throw Error("write failed: " + path);
}

}  // namespace ardiff

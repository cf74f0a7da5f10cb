#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ardiff/attention_mask.hpp"
#include "ardiff/backbone.hpp"
#include "ardiff/checkpoint.hpp"
#include "ardiff/noise_schedule.hpp"
#include "ardiff/objectives.hpp"
#include "ardiff/optimizer.hpp"
#include "ardiff/synthetic.hpp"
#include "ardiff/tape.hpp"

namespace ardiff {

struct TrainConfig {
    int64_t steps = 200;
    int batch_size = 4;
    double peak_lr = 3e-4;
    double weight_decay = 5e-2;
    double warmup_frac = 0.1;
    double decay_frac = 0.1;
    double ema_decay = 0.9999;
    double grad_clip = 1.0;
    uint64_t seed = 1;
    int64_t checkpoint_every = 0;  // 0 -> only the final checkpoint
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    int prefetch = 2;        // bounded-buffer capacity for batch generation
    bool text_only = false;  // language-model smoke mode (no image span)
    bool keep_snapshots = false;
    std::string out_dir;  // metrics/checkpoints land here; empty disables files
    LossWeights loss;
    SyntheticSpec data;
    AdamConfig adam;

    void validate() const {
        if (steps < 1) throw ConfigError("train.steps must be >= 1");
        if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
        if (warmup_frac < 0 || decay_frac < 0 || warmup_frac + decay_frac > 1.0)
            throw ConfigError("train.warmup_frac + train.decay_frac must be <= 1");
        if (ema_decay < 0 || ema_decay >= 1.0) throw ConfigError("train.ema_decay must be in [0,1)");
        if (T < 1) throw ConfigError("train.T must be >= 1");
        if (prefetch < 1) throw ConfigError("train.prefetch must be >= 1");
        loss.validate();
    }
};

// ---------------------------------------------------------------------------
// Bounded-buffer batch producer. Batches are pure functions of (seed, step),
// so running ahead cannot change results; the buffer only hides latency.
// ---------------------------------------------------------------------------

class BatchPipeline {
public:
    BatchPipeline(const SyntheticSpec& spec, uint64_t seed, int batch_size, int64_t first_step,
                  int64_t last_step, int capacity)
        : spec_(spec), seed_(seed), batch_size_(batch_size), next_produce_(first_step),
          last_step_(last_step), capacity_(capacity) {
        worker_ = std::thread([this] { run(); });
    }

    ~BatchPipeline() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }

    // Pops the batch for `step`; steps must be consumed in order.
    std::vector<Example> pop(int64_t step) {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return !buffer_.empty(); });
        if (buffer_.front().first != step)
            throw Error("batch pipeline consumed out of order");
        std::vector<Example> out = std::move(buffer_.front().second);
        buffer_.pop_front();
        cv_.notify_all();
        return out;
    }

private:
    void run() {
        for (int64_t s = next_produce_; s <= last_step_; ++s) {
            std::vector<Example> batch = generate_batch(spec_, seed_, static_cast<uint64_t>(s),
                                                        batch_size_);
            std::unique_lock<std::mutex> lock(mu_);
            cv_.wait(lock, [&] { return stop_ || static_cast<int>(buffer_.size()) < capacity_; });
            if (stop_) return;
            buffer_.emplace_back(s, std::move(batch));
            cv_.notify_all();
        }
    }

    SyntheticSpec spec_;
    uint64_t seed_;
    int batch_size_;
    int64_t next_produce_, last_step_;
    int capacity_;
    std::thread worker_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::pair<int64_t, std::vector<Example>>> buffer_;
    bool stop_ = false;
};

// ---------------------------------------------------------------------------
// Batch assembly: noising with counter-based draws keyed by (seed, step, lane)
// ---------------------------------------------------------------------------

struct PreparedSample {
    ForwardBatch batch;
    GroundTruth truth;
};

// Per-block timesteps are uniform on [1, T], independent across blocks.
inline std::vector<int> sample_block_timesteps(uint64_t seed, uint64_t step, uint64_t lane,
                                               int n_blocks, int T) {
    RngStream s(seed, RngRole::Timestep, step, lane);
    std::vector<int> t(n_blocks);
    for (int i = 0; i < n_blocks; ++i)
        t[i] = 1 + static_cast<int>(s.uniform_int(static_cast<uint64_t>(i),
                                                  static_cast<uint64_t>(T)));
    return t;
}

inline PreparedSample prepare_sample(const Example& ex, const BlockLayout& layout,
                                     const SequencePlan& plan, const ModelConfig& cfg,
                                     const NoiseSchedule& schedule, uint64_t seed, uint64_t step,
                                     uint64_t lane) {
    PreparedSample out;
    out.truth.text_ids = ex.text_ids;
    const std::vector<LatentBlock> blocks = split_blocks(ex.grid, layout);
    const int tpb = layout.tokens_per_block();

    out.truth.x0 = Mat(layout.ar_length * tpb, cfg.channels);
    for (int i = 0; i < layout.ar_length; ++i) {
        for (int p = 0; p < tpb; ++p) {
            const double* src = blocks[i].values.row_ptr(p);
            std::copy(src, src + cfg.channels, out.truth.x0.row_ptr(i * tpb + p));
        }
    }

    out.batch.text_ids = ex.text_ids;
    const std::vector<int> noisy_ids = plan.noisy_block_ids();
    out.batch.block_t = sample_block_timesteps(seed, step, lane,
                                               static_cast<int>(noisy_ids.size()), schedule.T);
    RngStream noise(seed, RngRole::DiffusionNoise, step, lane);
    out.batch.noisy = Mat(static_cast<int>(noisy_ids.size()) * tpb, cfg.channels);
    for (size_t j = 0; j < noisy_ids.size(); ++j) {
        const int id = noisy_ids[j];
        Mat eps(tpb, cfg.channels);
        const uint64_t base = static_cast<uint64_t>(id) * tpb * cfg.channels;
        for (size_t i = 0; i < eps.v.size(); ++i) eps.v[i] = noise.normal(base + i);
        const NoisyLatent nl = noising(blocks[id].values, out.batch.block_t[j], eps, schedule);
        for (int p = 0; p < tpb; ++p) {
            const double* src = nl.x_t.row_ptr(p);
            std::copy(src, src + cfg.channels,
                      out.batch.noisy.row_ptr(static_cast<int>(j) * tpb + p));
        }
    }

    const std::vector<int> clean_ids = plan.clean_block_ids();
    if (!clean_ids.empty()) {
        out.batch.clean = Mat(static_cast<int>(clean_ids.size()) * tpb, cfg.channels);
        for (size_t j = 0; j < clean_ids.size(); ++j) {
            for (int p = 0; p < tpb; ++p) {
                const double* src = blocks[clean_ids[j]].values.row_ptr(p);
                std::copy(src, src + cfg.channels,
                          out.batch.clean.row_ptr(static_cast<int>(j) * tpb + p));
            }
        }
    }
    return out;
}

// Deterministic text sequence for the language-model smoke mode: the class id
// followed by its successors modulo the class count.
inline std::vector<int> text_only_ids(int class_id, int len, int n_classes) {
    std::vector<int> ids(len);
    for (int i = 0; i < len; ++i) ids[i] = (class_id + i) % n_classes;
    return ids;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct Snapshot {
    int64_t step = 0;
    ParamStore params, ema;
};

struct TrainResult {
    ParamStore params, ema;
    AdamState adam;
    int64_t steps_done = 0;
    LossReport last_report;
    double initial_smoothed = 0.0;  // mean total over the first window
    double final_smoothed = 0.0;    // mean total over the last window
    std::vector<Snapshot> snapshots;
    std::string metrics_path, checkpoint_path, state_path;
};

namespace detail {

inline std::string format_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline constexpr const char* kMetricsHeader =
    "step,lr,total,text_nll,image_mse,hidden_mse,tower_mse,grad_norm,wall_ms";

inline TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const std::string& resume_state = "") {
    mcfg.validate();
    tcfg.validate();
    tcfg.data.validate(mcfg.vocab);

    const BlockLayout layout = build_block_layout(tcfg.data.grid_h, tcfg.data.grid_w,
                                                  mcfg.ar_length);
    const SequencePlan plan = tcfg.text_only
                                  ? plan_text_only(mcfg.max_text_len)
                                  : plan_sequence(layout, 1, mcfg.clean_blocks);
    const AttentionMask mask = build_mask(plan, mcfg.mask_mode);
    const MaskPtr mask_view = std::make_shared<BoolMat>(full_mask_view(mask));
    const NoiseSchedule schedule = linear_schedule(tcfg.T, tcfg.beta_start, tcfg.beta_end);

    TrainResult res;
    res.params = init_params(mcfg, tcfg.seed);
    res.ema = res.params;
    res.adam = make_adam_state(res.params);

    int64_t start_step = 1;
    if (!resume_state.empty()) {
        start_step = load_train_state(resume_state, mcfg, res.params, res.ema, res.adam) + 1;
    }

    std::ofstream metrics;
    if (!tcfg.out_dir.empty()) {
        std::filesystem::create_directories(tcfg.out_dir);
        res.metrics_path = tcfg.out_dir + "/metrics.csv";
        const bool append = start_step > 1 && std::filesystem::exists(res.metrics_path);
        metrics.open(res.metrics_path, append ? std::ios::app : std::ios::trunc);
        if (!metrics) throw Error("cannot open metrics file " + res.metrics_path);
        if (!append) metrics << kMetricsHeader << "\n";
    }

    const int window = static_cast<int>(std::min<int64_t>(20, tcfg.steps));
    std::deque<double> tail;
    double head_sum = 0.0;
    int head_n = 0;

    BatchPipeline pipeline(tcfg.data, tcfg.seed, tcfg.batch_size, start_step, tcfg.steps,
                           tcfg.prefetch);

    auto save_all = [&](int64_t step) {
        if (tcfg.out_dir.empty()) return;
        char tag[32];
        std::snprintf(tag, sizeof(tag), "%06lld", static_cast<long long>(step));
        res.checkpoint_path = tcfg.out_dir + "/ckpt_" + tag + ".ardf";
        res.state_path = tcfg.out_dir + "/state_" + tag + ".ards";
        save_checkpoint(res.checkpoint_path, mcfg, res.params, &res.ema);
        save_train_state(res.state_path, mcfg, step, res.params, res.ema, res.adam);
    };

    for (int64_t step = start_step; step <= tcfg.steps; ++step) {
        const auto tick = std::chrono::steady_clock::now();
        std::vector<Example> batch = pipeline.pop(step);
        const double lr = wsd_lr(step - 1, tcfg.steps, tcfg.peak_lr, tcfg.warmup_frac,
                                 tcfg.decay_frac);

        Tape tape;
        const BoundParams bound = bind_params(tape, res.params, true);
        std::vector<Tape::Id> totals;
        LossReport mean_report;
        for (int lane = 0; lane < tcfg.batch_size; ++lane) {
            Example& ex = batch[lane];
            PreparedSample ps;
            if (tcfg.text_only) {
                ps.batch.text_ids = text_only_ids(ex.class_id, mcfg.max_text_len,
                                                  tcfg.data.n_classes);
                ps.truth.text_ids = ps.batch.text_ids;
            } else {
                ps = prepare_sample(ex, layout, plan, mcfg, schedule, tcfg.seed,
                                    static_cast<uint64_t>(step), static_cast<uint64_t>(lane));
            }
            const ForwardOutputs fwd = full_forward(tape, bound, mcfg, plan, ps.batch, mask_view);
            LossReport report;
            const LossNodes nodes = total_loss(tape, fwd, plan, mcfg, ps.truth, tcfg.loss,
                                               &report);
            totals.push_back(nodes.total);
            mean_report.total += report.total;
            mean_report.text_nll += report.text_nll;
            mean_report.image_mse += report.image_mse;
            mean_report.hidden_mse += report.hidden_mse;
            mean_report.tower_mse += report.tower_mse;
        }
        const double inv_b = 1.0 / tcfg.batch_size;
        mean_report.total *= inv_b;
        mean_report.text_nll *= inv_b;
        mean_report.image_mse *= inv_b;
        mean_report.hidden_mse *= inv_b;
        mean_report.tower_mse *= inv_b;

        const Tape::Id batch_total =
            tape.weighted_sum(totals, std::vector<double>(totals.size(), inv_b));
        if (!tape.val(batch_total).all_finite()) {
            if (!tcfg.out_dir.empty())
                save_train_state(tcfg.out_dir + "/crash.ards", mcfg, step - 1, res.params,
                                 res.ema, res.adam);
            throw NonFiniteLoss("non-finite training loss at step " + std::to_string(step));
        }
        tape.backward(batch_total);

        std::vector<Mat> grads;
        grads.reserve(res.params.count());
        for (size_t i = 0; i < res.params.count(); ++i) {
            const Tape::Id id = bound.ids[i];
            grads.push_back(id >= 0 && tape.has_grad(id)
                                ? tape.grad(id)
                                : Mat(res.params.values[i].rows, res.params.values[i].cols));
        }
        const double gnorm = clip_gradients(grads, tcfg.grad_clip);
        adamw_step(res.params, grads, res.adam, lr, tcfg.weight_decay, tcfg.adam);
        ema_update(res.ema, res.params, tcfg.ema_decay);

        if (head_n < window) {
            head_sum += mean_report.total;
            ++head_n;
        }
        tail.push_back(mean_report.total);
        if (static_cast<int>(tail.size()) > window) tail.pop_front();

        if (metrics.is_open()) {
            const auto tock = std::chrono::steady_clock::now();
            const double wall_ms =
                std::chrono::duration<double, std::milli>(tock - tick).count();
            metrics << step << ',' << detail::format_metric(lr) << ','
                    << detail::format_metric(mean_report.total) << ','
                    << detail::format_metric(mean_report.text_nll) << ','
                    << detail::format_metric(mean_report.image_mse) << ','
                    << detail::format_metric(mean_report.hidden_mse) << ','
                    << detail::format_metric(mean_report.tower_mse) << ','
                    << detail::format_metric(gnorm) << ','
                    << detail::format_metric(wall_ms) << "\n";
        }

        res.last_report = mean_report;
        res.steps_done = step;
        const bool at_checkpoint =
            (tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0) ||
            step == tcfg.steps;
        if (at_checkpoint) {
            save_all(step);
            if (tcfg.keep_snapshots) res.snapshots.push_back({step, res.params, res.ema});
        }
    }

    res.initial_smoothed = head_n > 0 ? head_sum / head_n : 0.0;
    double tail_sum = 0.0;
    for (double v : tail) tail_sum += v;
    res.final_smoothed = tail.empty() ? 0.0 : tail_sum / static_cast<double>(tail.size());
    return res;
}

}  // namespace ardiff

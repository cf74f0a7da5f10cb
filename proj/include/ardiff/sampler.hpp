#pragma once

#include <memory>
#include <vector>

#include "ardiff/attention_mask.hpp"
#include "ardiff/backbone.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/noise_schedule.hpp"
#include "ardiff/rng.hpp"
#include "ardiff/tape.hpp"

namespace ardiff {

struct SamplerConfig {
    int steps = 250;  // denoising steps per block
    bool use_ema = true;
    uint64_t seed = 7;
    bool clean_blocks = true;  // re-feed generated blocks as clean context
    bool ar_condition = true;  // inject the conditioning representation

    void validate() const {
        if (steps < 1) throw ConfigError("sampler.steps must be >= 1");
    }
};

struct NfeLedger {
    int n_layers = 1;
    int diffusion_depth = 1;
    int64_t block_passes = 0;    // conditioning-stage passes
    int64_t denoise_passes = 0;  // denoising-stage passes

    int64_t raw_passes() const { return block_passes + denoise_passes; }

    // Each pass is weighted by the fraction of layers it executes.
    double layer_weighted() const {
        const double n = n_layers;
        return static_cast<double>(block_passes) * (n_layers - diffusion_depth) / n +
               static_cast<double>(denoise_passes) * diffusion_depth / n;
    }
};

// ---------------------------------------------------------------------------
// Condition cache: per-layer hidden trajectories of the growing context
// (prompt, begin-of-image, generated blocks), appended one block at a time.
// Context rows never attend noisy queries, so the trajectories are reusable
// across every denoising step and every later block.
// ---------------------------------------------------------------------------

class ConditionCache {
public:
    ConditionCache(const ModelConfig& cfg, const ParamStore& params, const BlockLayout& layout,
                   std::vector<int> prompt_ids)
        : cfg_(cfg), params_(&params), layout_(layout), prompt_(std::move(prompt_ids)) {
        if (static_cast<int>(prompt_.size()) > cfg_.max_text_len)
            throw ShapeMismatch("prompt longer than model.max_text_len");
        levels_.assign(cfg_.n_layers + 1, Mat(0, cfg_.hidden));
        append_prompt();
    }

    int blocks() const { return n_blocks_; }

    // Appends a generated block as context. Blocks must arrive in order;
    // re-pushing an earlier index rolls the cache back to that point first.
    void push_block(int block_id, const Mat& values, int noisy_t) {
        require_shape(values, layout_.tokens_per_block(), cfg_.channels, "cached block");
        if (block_id > n_blocks_)
            throw CacheInvalidation("cache push out of order: block " + std::to_string(block_id));
        if (block_id < n_blocks_) rollback(block_id);
        block_values_.push_back(values);
        n_blocks_ += 1;
        append_rows(block_id, values, noisy_t);
    }

    // Conditioning representation for block_id, read from the hidden state
    // after the conditioning stage. Requires all preceding blocks cached.
    Mat condition(int block_id) const {
        if (block_id > n_blocks_)
            throw CacheInvalidation("condition for block " + std::to_string(block_id) +
                                    " requires " + std::to_string(block_id) + " cached blocks");
        const int tpb = layout_.tokens_per_block();
        Mat cond(tpb, cfg_.hidden);
        if (!cfg_.ar_condition || cfg_.ar_layers() == 0) return cond;  // zeros
        const Mat& h = levels_[cfg_.ar_layers()];
        const SequencePlan plan = ctx_plan(n_blocks_);
        if (block_id == 0) {
            for (int p = 0; p < tpb; ++p)
                std::copy(h.row_ptr(plan.boi_pos), h.row_ptr(plan.boi_pos) + cfg_.hidden,
                          cond.row_ptr(p));
            return cond;
        }
        const Role role = clean_role() ? Role::CleanBlock : Role::NoisyBlock;
        const std::vector<int> rows = plan.block_tokens(role, block_id - 1);
        for (int p = 0; p < tpb; ++p)
            std::copy(h.row_ptr(rows[p]), h.row_ptr(rows[p]) + cfg_.hidden, cond.row_ptr(p));
        return cond;
    }

    // One denoising-stage pass for block_id over the cached context:
    // h enters as embedded x_t plus condition, runs the trailing layers, and
    // is projected back to latent channels.
    Mat predict_x0(int block_id, const Mat& x_t, int t, const Mat& condition) const {
        if (block_id != n_blocks_)
            throw CacheInvalidation("denoising block " + std::to_string(block_id) +
                                    " but cache holds " + std::to_string(n_blocks_));
        const int tpb = layout_.tokens_per_block();
        require_shape(x_t, tpb, cfg_.channels, "denoise input");
        require_shape(condition, tpb, cfg_.hidden, "denoise condition");

        const SequencePlan plan = denoise_plan(block_id);
        const AttentionMask sq = build_mask(plan, cfg_.mask_mode);
        const std::vector<int> block_rows = plan.block_tokens(Role::NoisyBlock, block_id);
        std::vector<int> kv_rows;  // context first, then the block itself
        for (int r = 0; r < plan.seq_len; ++r)
            if (plan.role[r] != Role::NoisyBlock || plan.block[r] != block_id)
                kv_rows.push_back(r);
        const int ctx_rows = static_cast<int>(kv_rows.size());
        for (int r : block_rows) kv_rows.push_back(r);
        const auto mask = std::make_shared<BoolMat>(submask(sq, block_rows, kv_rows));

        auto q_groups = std::make_shared<std::vector<int>>(tpb, kTowerNoise);
        auto kv_groups = std::make_shared<std::vector<int>>();
        auto q_coords = std::make_shared<std::vector<std::pair<int, int>>>();
        auto kv_coords = std::make_shared<std::vector<std::pair<int, int>>>();
        for (int r : kv_rows) {
            kv_groups->push_back(tower_of(plan.role[r]));
            kv_coords->emplace_back(plan.coord0[r], plan.coord1[r]);
        }
        for (int r : block_rows) q_coords->emplace_back(plan.coord0[r], plan.coord1[r]);

        Tape tape;
        const BoundParams b = bind_params(tape, *params_, false);
        Tape::Id h = embed_block(tape, b, x_t, t);
        h = tape.add(h, tape.leaf(condition));
        for (int L = cfg_.ar_layers() + 1; L <= cfg_.n_layers; ++L) {
            const Tape::Id ctx = tape.leaf(ctx_level(L - 1, ctx_rows));
            const Tape::Id kv = tape.concat_rows({ctx, h});
            h = decoder_layer(tape, b, cfg_, L - 1, h, kv, q_groups, kv_groups, q_coords,
                              kv_coords, mask);
        }
        const Tape::Id normed = final_norm(tape, b, cfg_, h, q_groups);
        return tape.val(tape.matmul(normed, b.id("head.out_proj")));
    }

private:
    bool clean_role() const { return cfg_.clean_blocks; }

    // Plan covering the cached context. With no blocks yet, a placeholder
    // noisy block keeps the image span alive; its rows sit past the cached
    // rows and are never referenced.
    SequencePlan ctx_plan(int blocks) const {
        if (blocks == 0) {
            const std::vector<int> placeholder{0};
            return make_plan(layout_, static_cast<int>(prompt_.size()), {}, placeholder, false);
        }
        std::vector<int> ids(blocks);
        for (int i = 0; i < blocks; ++i) ids[i] = i;
        if (clean_role()) return make_plan(layout_, static_cast<int>(prompt_.size()), ids, {}, false);
        return make_plan(layout_, static_cast<int>(prompt_.size()), {}, ids, false);
    }

    SequencePlan denoise_plan(int block_id) const {
        std::vector<int> prior(block_id);
        for (int i = 0; i < block_id; ++i) prior[i] = i;
        if (clean_role()) {
            const std::vector<int> self{block_id};
            return make_plan(layout_, static_cast<int>(prompt_.size()), prior, self, false);
        }
        prior.push_back(block_id);
        return make_plan(layout_, static_cast<int>(prompt_.size()), {}, prior, false);
    }

    Mat ctx_level(int level, int rows) const {
        Mat out(rows, cfg_.hidden);
        for (int r = 0; r < rows; ++r)
            std::copy(levels_[level].row_ptr(r), levels_[level].row_ptr(r) + cfg_.hidden,
                      out.row_ptr(r));
        return out;
    }

    Tape::Id embed_block(Tape& tape, const BoundParams& b, const Mat& values, int noisy_t) const {
        const Tape::Id x = tape.leaf(values);
        Tape::Id h = tape.matmul(x, b.id("embed.patch"));
        if (noisy_t >= 0) {
            const std::vector<int> ts(values.rows, noisy_t);
            const Tape::Id f = tape.leaf(time_feature_rows(ts, cfg_.hidden));
            h = tape.add(h, tape.matmul(f, b.id("time.proj")));
        }
        return h;
    }

    void append_prompt() {
        Tape tape;
        const BoundParams b = bind_params(tape, *params_, false);
        std::vector<int> ids = prompt_;
        ids.push_back(cfg_.boi_id());
        Tape::Id h = tape.gather_rows(b.id("embed.token"), ids);
        grow(tape, b, h, /*block_id=*/-1);
    }

    void append_rows(int block_id, const Mat& values, int noisy_t) {
        Tape tape;
        const BoundParams b = bind_params(tape, *params_, false);
        Tape::Id h = embed_block(tape, b, values, clean_role() ? -1 : noisy_t);
        grow(tape, b, h, block_id);
    }

    // Runs `h` (the newly appended rows, already embedded) through all layers
    // with keys = cached context + the new rows, then extends every level.
    void grow(Tape& tape, const BoundParams& b, Tape::Id h, int block_id) {
        const SequencePlan plan = ctx_plan_for_grow(block_id);
        const AttentionMask sq = build_mask(plan, cfg_.mask_mode);
        const int new_rows = tape.val(h).rows;
        const int old_rows = levels_[0].rows;
        const int live_rows = old_rows + new_rows;  // plan may carry a placeholder block
        std::vector<int> qrows(new_rows), krows(live_rows);
        for (int i = 0; i < new_rows; ++i) qrows[i] = old_rows + i;
        for (int i = 0; i < live_rows; ++i) krows[i] = i;
        const auto mask = std::make_shared<BoolMat>(submask(sq, qrows, krows));

        auto q_groups = std::make_shared<std::vector<int>>();
        auto kv_groups = std::make_shared<std::vector<int>>();
        auto q_coords = std::make_shared<std::vector<std::pair<int, int>>>();
        auto kv_coords = std::make_shared<std::vector<std::pair<int, int>>>();
        for (int r = 0; r < live_rows; ++r) {
            kv_groups->push_back(tower_of(plan.role[r]));
            kv_coords->emplace_back(plan.coord0[r], plan.coord1[r]);
            if (r >= old_rows) {
                q_groups->push_back(tower_of(plan.role[r]));
                q_coords->emplace_back(plan.coord0[r], plan.coord1[r]);
            }
        }

        append_level(0, tape.val(h));
        for (int L = 1; L <= cfg_.n_layers; ++L) {
            const Tape::Id ctx = tape.leaf(ctx_level_rows(L - 1, old_rows));
            const Tape::Id kv = old_rows > 0 ? tape.concat_rows({ctx, h}) : h;
            h = decoder_layer(tape, b, cfg_, L - 1, h, kv, q_groups, kv_groups, q_coords,
                              kv_coords, mask);
            append_level(L, tape.val(h));
        }
    }

    // Plan for appending block_id (or, for -1, the prompt rows themselves).
    SequencePlan ctx_plan_for_grow(int block_id) const { return ctx_plan(block_id + 1); }

    Mat ctx_level_rows(int level, int rows) const { return ctx_level(level, rows); }

    void append_level(int level, const Mat& rows) {
        Mat& dst = levels_[level];
        Mat merged(dst.rows + rows.rows, cfg_.hidden);
        std::copy(dst.v.begin(), dst.v.end(), merged.v.begin());
        std::copy(rows.v.begin(), rows.v.end(), merged.v.begin() + dst.v.size());
        dst = std::move(merged);
    }

    void rollback(int blocks) {
        const int keep = static_cast<int>(prompt_.size()) + 1 +
                         blocks * layout_.tokens_per_block();
        for (Mat& level : levels_) {
            Mat trimmed(keep, cfg_.hidden);
            std::copy(level.v.begin(), level.v.begin() + static_cast<size_t>(keep) * cfg_.hidden,
                      trimmed.v.begin());
            level = std::move(trimmed);
        }
        block_values_.resize(blocks);
        n_blocks_ = blocks;
    }

    ModelConfig cfg_;
    const ParamStore* params_;
    BlockLayout layout_;
    std::vector<int> prompt_;
    std::vector<Mat> levels_;  // levels_[L] = context hidden state after L layers
    std::vector<Mat> block_values_;
    int n_blocks_ = 0;
};

// ---------------------------------------------------------------------------
// Block denoiser interface; generate() is written against it so tests can
// substitute an oracle.
// ---------------------------------------------------------------------------

class BlockDenoiser {
public:
    virtual ~BlockDenoiser() = default;
    virtual void start_block(int block_id) = 0;
    virtual Mat predict_x0(int block_id, const Mat& x_t, int t) = 0;
    virtual void finish_block(int block_id, const Mat& z0) = 0;
};

class ModelDenoiser : public BlockDenoiser {
public:
    ModelDenoiser(const ModelConfig& cfg, const ParamStore& params, const BlockLayout& layout,
                  const SamplerConfig& scfg, std::vector<int> prompt_ids)
        : cfg_(cfg), scfg_(scfg) {
        ModelConfig effective = cfg_;
        effective.clean_blocks = scfg.clean_blocks;
        effective.ar_condition = scfg.ar_condition;
        cfg_ = effective;
        cache_ = std::make_unique<ConditionCache>(cfg_, params, layout, std::move(prompt_ids));
    }

    void start_block(int block_id) override {
        if (block_id > 0) cache_->push_block(block_id - 1, last_block_, 1);
        cond_ = cache_->condition(block_id);
    }

    Mat predict_x0(int block_id, const Mat& x_t, int t) override {
        return cache_->predict_x0(block_id, x_t, t, cond_);
    }

    void finish_block(int, const Mat& z0) override { last_block_ = z0; }

    const ConditionCache& cache() const { return *cache_; }

private:
    ModelConfig cfg_;
    SamplerConfig scfg_;
    std::unique_ptr<ConditionCache> cache_;
    Mat cond_;
    Mat last_block_;
};

// ---------------------------------------------------------------------------
// Block-autoregressive DDIM generation
// ---------------------------------------------------------------------------

struct GenerateResult {
    Mat grid;  // (grid_h*grid_w, channels), raster token order
    NfeLedger ledger;
    std::vector<LatentBlock> blocks;
};

// sample_index seeds the per-block initial noise so independent samples from
// one seed stay reproducible.
inline GenerateResult generate(BlockDenoiser& denoiser, const ModelConfig& cfg,
                               const SamplerConfig& scfg, const NoiseSchedule& schedule,
                               const BlockLayout& layout, uint64_t sample_index = 0) {
    scfg.validate();
    const std::vector<int> plan_ts = spacing(schedule.T, scfg.steps);
    GenerateResult res;
    res.ledger.n_layers = cfg.n_layers;
    res.ledger.diffusion_depth = cfg.diffusion_depth;

    for (int block = 0; block < layout.ar_length; ++block) {
        denoiser.start_block(block);
        res.ledger.block_passes += 1;

        Mat x(layout.tokens_per_block(), cfg.channels);
        RngStream(scfg.seed, RngRole::SampleInit, sample_index, static_cast<uint64_t>(block))
            .fill_normal(x);

        for (size_t k = 0; k < plan_ts.size(); ++k) {
            const int t = plan_ts[k];
            const int t_prev = k + 1 < plan_ts.size() ? plan_ts[k + 1] : 0;
            const Mat z0 = denoiser.predict_x0(block, x, t);
            res.ledger.denoise_passes += 1;
            x = ddim_step(x, z0, t, t_prev, schedule);
        }
        denoiser.finish_block(block, x);
        res.blocks.push_back({x, block});
    }
    res.grid = join_blocks(res.blocks, layout);
    return res;
}

}  // namespace ardiff

#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ardiff/attention_mask.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/layout.hpp"
#include "ardiff/mat.hpp"
#include "ardiff/rng.hpp"
#include "ardiff/tape.hpp"

namespace ardiff {

namespace detail {
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}
inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}
}  // namespace detail

enum class TowerMode { Shared, Separate };

// Per-token parameter routing: text-family rows use tower 0, clean image rows
// tower 1, noisy image rows tower 2.
constexpr int kTowerText = 0;
constexpr int kTowerClean = 1;
constexpr int kTowerNoise = 2;

inline const char* tower_tag(int g) {
    switch (g) {
        case kTowerText: return "text";
        case kTowerClean: return "clean";
        default: return "noise";
    }
}

struct ModelConfig {
    int vocab = 16;  // includes the two image delimiters at vocab-2 / vocab-1
    int hidden = 16;
    int n_layers = 2;         // N
    int diffusion_depth = 1;  // D: trailing layers run per denoising step
    int n_heads = 2;
    int ffn_hidden = 0;  // 0 -> 4 * hidden
    int channels = 4;    // latent channels per image token
    int max_text_len = 1;
    int grid_h = 4, grid_w = 4;
    int ar_length = 4;  // l: number of image blocks
    bool clean_blocks = true;
    bool ar_condition = true;
    TowerMode towers = TowerMode::Separate;
    MaskMode mask_mode = MaskMode::Full;
    double rope_theta = 10000.0;
    double rms_eps = 1e-5;
    double init_std = 0.02;

    int head_dim() const { return hidden / n_heads; }
    int ffn() const { return ffn_hidden > 0 ? ffn_hidden : 4 * hidden; }
    int ar_layers() const { return n_layers - diffusion_depth; }
    int boi_id() const { return vocab - 2; }
    int eoi_id() const { return vocab - 1; }

    void validate() const {
        if (vocab < 3) throw ConfigError("model.vocab must be >= 3 (ids + delimiters)");
        if (n_heads < 1 || hidden % n_heads != 0)
            throw ConfigError("model.hidden must be divisible by model.n_heads");
        if (head_dim() % 4 != 0)
            throw ConfigError("head_dim must be a multiple of 4 for 2-axis rotary pairing");
        if (diffusion_depth < 1 || diffusion_depth > n_layers)
            throw ConfigError("model.diffusion_depth must satisfy 1 <= D <= N");
        if (channels < 1) throw ConfigError("model.channels must be >= 1");
        if (max_text_len < 0) throw ConfigError("model.max_text_len must be >= 0");
        if (ar_length < 1) throw ConfigError("model.ar_length must be >= 1");
        build_block_layout(grid_h, grid_w, ar_length);  // throws NonDivisibleGrid
    }
};

// ---------------------------------------------------------------------------
// Named parameter table. Order is creation order and is part of the
// checkpoint contract.
// ---------------------------------------------------------------------------

struct ParamStore {
    std::vector<std::string> names;
    std::vector<Mat> values;
    std::unordered_map<std::string, int> lookup;

    Mat& add(const std::string& name, int rows, int cols) {
        if (lookup.count(name)) throw Error("duplicate parameter name: " + name);
        lookup.emplace(name, static_cast<int>(names.size()));
        names.push_back(name);
        values.emplace_back(rows, cols);
        return values.back();
    }

    bool has(const std::string& name) const { return lookup.count(name) != 0; }

    int index_of(const std::string& name) const {
        auto it = lookup.find(name);
        if (it == lookup.end()) throw Error("unknown parameter: " + name);
        return it->second;
    }

    Mat& at(const std::string& name) { return values[index_of(name)]; }
    const Mat& at(const std::string& name) const { return values[index_of(name)]; }

    size_t count() const { return names.size(); }

    size_t scalar_count() const {
        size_t n = 0;
        for (const Mat& m : values) n += m.v.size();
        return n;
    }
};

inline std::string layer_param_name(const ModelConfig& cfg, int layer, int tower,
                                    const char* field) {
    const char* tw = cfg.towers == TowerMode::Shared ? "shared" : tower_tag(tower);
    return "layers." + std::to_string(layer) + "." + tw + "." + std::string(field);
}

inline std::string final_norm_name(const ModelConfig& cfg, int tower) {
    const char* tw = cfg.towers == TowerMode::Shared ? "shared" : tower_tag(tower);
    return "final." + std::string(tw) + ".norm";
}

// Truncated-normal init keyed by parameter name, so values do not depend on
// creation order; norm gains start at one.
inline ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParamStore p;
    auto weight = [&](const std::string& name, int r, int c) {
        Mat& m = p.add(name, r, c);
        RngStream(seed, RngRole::WeightInit, 0, detail::fnv1a(name)).fill_trunc_normal(m, cfg.init_std);
    };
    auto gain = [&](const std::string& name, int w) {
        Mat& m = p.add(name, 1, w);
        for (double& x : m.v) x = 1.0;
    };

    weight("embed.token", cfg.vocab, cfg.hidden);
    weight("embed.patch", cfg.channels, cfg.hidden);
    weight("time.proj", cfg.hidden, cfg.hidden);

    const int n_towers = cfg.towers == TowerMode::Shared ? 1 : 3;
    for (int L = 0; L < cfg.n_layers; ++L) {
        for (int g = 0; g < n_towers; ++g) {
            gain(layer_param_name(cfg, L, g, "attn_norm"), cfg.hidden);
            weight(layer_param_name(cfg, L, g, "wq"), cfg.hidden, cfg.hidden);
            weight(layer_param_name(cfg, L, g, "wk"), cfg.hidden, cfg.hidden);
            weight(layer_param_name(cfg, L, g, "wv"), cfg.hidden, cfg.hidden);
            weight(layer_param_name(cfg, L, g, "wo"), cfg.hidden, cfg.hidden);
            gain(layer_param_name(cfg, L, g, "ffn_norm"), cfg.hidden);
            weight(layer_param_name(cfg, L, g, "w_gate"), cfg.hidden, cfg.ffn());
            weight(layer_param_name(cfg, L, g, "w_up"), cfg.hidden, cfg.ffn());
            weight(layer_param_name(cfg, L, g, "w_down"), cfg.ffn(), cfg.hidden);
        }
    }
    for (int g = 0; g < n_towers; ++g) gain(final_norm_name(cfg, g), cfg.hidden);

    weight("head.lm", cfg.hidden, cfg.vocab);
    weight("head.out_proj", cfg.hidden, cfg.channels);    // noisy rows -> z_hat
    weight("head.clean_proj", cfg.hidden, cfg.channels);  // clean rows -> next-block prediction
    weight("head.cond_proj", cfg.hidden, cfg.channels);   // condition readout for the hidden loss
    return p;
}

// Parameters as tape leaves, bound lazily on first use so partial passes
// (the sampler's denoise stage) only pay for the parameters they touch.
// An unbound parameter simply has a zero gradient.
struct BoundParams {
    Tape* tape = nullptr;
    const ParamStore* store = nullptr;
    bool requires_grad = false;
    mutable std::vector<Tape::Id> ids;

    Tape::Id id(const std::string& name) const {
        const int i = store->index_of(name);
        if (ids[i] < 0) ids[i] = tape->leaf(store->values[i], requires_grad);
        return ids[i];
    }

    bool bound(size_t index) const { return ids[index] >= 0; }
};

inline BoundParams bind_params(Tape& t, const ParamStore& p, bool requires_grad) {
    BoundParams b;
    b.tape = &t;
    b.store = &p;
    b.requires_grad = requires_grad;
    b.ids.assign(p.count(), -1);
    return b;
}

// ---------------------------------------------------------------------------
// Plan-derived routing tables
// ---------------------------------------------------------------------------

inline int tower_of(Role r) {
    if (is_text_family(r)) return kTowerText;
    return r == Role::CleanBlock ? kTowerClean : kTowerNoise;
}

inline std::shared_ptr<std::vector<int>> tower_groups(const SequencePlan& plan) {
    auto g = std::make_shared<std::vector<int>>(plan.seq_len);
    for (int p = 0; p < plan.seq_len; ++p) (*g)[p] = tower_of(plan.role[p]);
    return g;
}

inline std::shared_ptr<std::vector<std::pair<int, int>>> plan_coords(const SequencePlan& plan) {
    auto c = std::make_shared<std::vector<std::pair<int, int>>>(plan.seq_len);
    for (int p = 0; p < plan.seq_len; ++p) (*c)[p] = {plan.coord0[p], plan.coord1[p]};
    return c;
}

// Rows that receive a vocabulary head. All TEXT rows predict their successor;
// when text and an image span are both present, the last image row predicts
// the end-of-image token. A plan without text has no language-model task.
inline std::vector<int> lm_logit_rows(const SequencePlan& plan) {
    std::vector<int> rows = plan.tokens_of(Role::Text);
    if (!rows.empty() && plan.eoi_pos >= 0) rows.push_back(plan.eoi_pos - 1);
    return rows;
}

// ---------------------------------------------------------------------------
// Embedding with timestep injection
// ---------------------------------------------------------------------------

// Sinusoidal features of an integer timestep; width must be even.
inline Mat time_feature_rows(const std::vector<int>& ts, int width) {
    const int half = width / 2;
    Mat f(static_cast<int>(ts.size()), width);
    for (size_t r = 0; r < ts.size(); ++r) {
        double* row = f.row_ptr(static_cast<int>(r));
        for (int k = 0; k < half; ++k) {
            const double freq = std::pow(10000.0, -static_cast<double>(k) / half);
            row[2 * k] = std::sin(ts[r] * freq);
            row[2 * k + 1] = std::cos(ts[r] * freq);
        }
    }
    return f;
}

struct ForwardBatch {
    std::vector<int> text_ids;  // size == plan.text_len
    Mat clean;                  // (#clean entries * tokens_per_block, channels)
    Mat noisy;                  // (#noisy entries * tokens_per_block, channels), already noised
    std::vector<int> block_t;   // per noisy entry, plan order
};

struct ForwardOutputs {
    Tape::Id h0 = -1;       // embedded inputs
    Tape::Id h_ar = -1;     // hidden state after the conditioning stage
    Tape::Id h_final = -1;  // normalized final hidden state
    Tape::Id clean_in = -1, noisy_in = -1;  // input leaves (for probes)

    Tape::Id logits = -1;  // (#lm rows, vocab); -1 when the plan has no text
    std::vector<int> logit_rows;

    Tape::Id z_hat = -1;  // (#noisy rows, channels)
    std::vector<Tape::Id> conditions;  // per noisy block, (tokens_per_block, hidden)
    Tape::Id cond_cat = -1;            // conditions stacked in plan order
    Tape::Id cond_readout = -1;        // (#noisy rows, channels) via head.cond_proj
    Tape::Id z_clean = -1;             // (#clean rows, channels); -1 when clean disabled
};

inline void check_batch(const SequencePlan& plan, const ModelConfig& cfg,
                        const ForwardBatch& batch) {
    if (static_cast<int>(batch.text_ids.size()) != plan.text_len)
        throw ShapeMismatch("batch text_ids size does not match plan");
    for (int id : batch.text_ids) {
        if (id < 0 || id >= cfg.vocab) throw ShapeMismatch("text id out of vocab range");
    }
    const int clean_rows = static_cast<int>(plan.clean_block_ids().size()) * plan.tokens_per_block;
    const int noisy_rows = static_cast<int>(plan.noisy_block_ids().size()) * plan.tokens_per_block;
    if (clean_rows > 0) require_shape(batch.clean, clean_rows, cfg.channels, "batch clean latents");
    if (noisy_rows > 0) require_shape(batch.noisy, noisy_rows, cfg.channels, "batch noisy latents");
    if (static_cast<int>(batch.block_t.size()) * plan.tokens_per_block != noisy_rows)
        throw ShapeMismatch("batch block_t size does not match plan");
}

inline Tape::Id embed_inputs(Tape& t, const BoundParams& b, const ModelConfig& cfg,
                             const SequencePlan& plan, const ForwardBatch& batch,
                             ForwardOutputs* out = nullptr, bool input_grads = false) {
    check_batch(plan, cfg, batch);
    const Tape::Id tok = b.id("embed.token");
    const Tape::Id patch = b.id("embed.patch");
    std::vector<Tape::Id> parts;

    if (plan.text_len > 0 || plan.boi_pos >= 0) {
        std::vector<int> ids = batch.text_ids;
        if (plan.boi_pos >= 0) ids.push_back(cfg.boi_id());
        if (!ids.empty()) parts.push_back(t.gather_rows(tok, std::move(ids)));
    }
    if (!plan.clean_block_ids().empty()) {
        const Tape::Id clean_in = t.leaf(batch.clean, input_grads);
        if (out) out->clean_in = clean_in;
        parts.push_back(t.matmul(clean_in, patch));
    }
    if (!plan.noisy_block_ids().empty()) {
        const Tape::Id noisy_in = t.leaf(batch.noisy, input_grads);
        if (out) out->noisy_in = noisy_in;
        std::vector<int> t_rows;
        t_rows.reserve(batch.noisy.rows);
        for (int bt : batch.block_t)
            for (int p = 0; p < plan.tokens_per_block; ++p) t_rows.push_back(bt);
        const Tape::Id feats = t.leaf(time_feature_rows(t_rows, cfg.hidden));
        const Tape::Id temb = t.matmul(feats, b.id("time.proj"));
        parts.push_back(t.add(t.matmul(noisy_in, patch), temb));
    }
    if (plan.eoi_pos >= 0) parts.push_back(t.gather_rows(tok, {cfg.eoi_id()}));

    if (parts.empty()) throw ShapeMismatch("embed_inputs: empty plan");
    Tape::Id h0 = parts.size() == 1 ? parts[0] : t.concat_rows(std::move(parts));
    if (t.val(h0).rows != plan.seq_len) throw ShapeMismatch("embed_inputs: row count vs plan");
    return h0;
}

// ---------------------------------------------------------------------------
// Decoder layer (pre-norm, rotary attention, SwiGLU, no biases)
// ---------------------------------------------------------------------------

inline std::array<Tape::Id, 3> tower_param_ids(const BoundParams& b, const ModelConfig& cfg,
                                               int layer, const char* field) {
    std::array<Tape::Id, 3> ids{};
    for (int g = 0; g < 3; ++g) ids[g] = b.id(layer_param_name(cfg, layer, g, field));
    return ids;
}

using Groups = std::shared_ptr<const std::vector<int>>;
using Coords = std::shared_ptr<const std::vector<std::pair<int, int>>>;
using MaskPtr = std::shared_ptr<const BoolMat>;

// One decoder layer. Queries are the rows of h_q; keys/values are the rows of
// h_kv (pass h_q twice for ordinary self-attention). The residual path and
// the feed-forward apply to the query rows only.
inline Tape::Id decoder_layer(Tape& t, const BoundParams& b, const ModelConfig& cfg, int layer,
                              Tape::Id h_q, Tape::Id h_kv, const Groups& gq, const Groups& gkv,
                              const Coords& cq, const Coords& ckv, const MaskPtr& mask) {
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

    const auto attn_norm = tower_param_ids(b, cfg, layer, "attn_norm");
    const Tape::Id xq = t.group_rmsnorm(h_q, attn_norm, gq, cfg.rms_eps);
    const Tape::Id xkv = h_kv == h_q ? xq : t.group_rmsnorm(h_kv, attn_norm, gkv, cfg.rms_eps);

    Tape::Id q = t.group_matmul(xq, tower_param_ids(b, cfg, layer, "wq"), gq);
    Tape::Id k = t.group_matmul(xkv, tower_param_ids(b, cfg, layer, "wk"), gkv);
    const Tape::Id v = t.group_matmul(xkv, tower_param_ids(b, cfg, layer, "wv"), gkv);
    q = t.rope2d(q, cq, cfg.n_heads, cfg.rope_theta);
    k = t.rope2d(k, ckv, cfg.n_heads, cfg.rope_theta);

    std::vector<Tape::Id> head_outs;
    head_outs.reserve(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
        const int c0 = h * cfg.head_dim(), c1 = c0 + cfg.head_dim();
        const Tape::Id qh = t.slice_cols(q, c0, c1);
        const Tape::Id kh = t.slice_cols(k, c0, c1);
        const Tape::Id vh = t.slice_cols(v, c0, c1);
        const Tape::Id scores = t.scale(t.matmul_nt(qh, kh), att_scale);
        const Tape::Id probs = t.masked_softmax(scores, mask);
        head_outs.push_back(t.matmul(probs, vh));
    }
    const Tape::Id attn = cfg.n_heads == 1 ? head_outs[0] : t.concat_cols(std::move(head_outs));
    const Tape::Id o = t.group_matmul(attn, tower_param_ids(b, cfg, layer, "wo"), gq);
    const Tape::Id h1 = t.add(h_q, o);

    const Tape::Id xf = t.group_rmsnorm(h1, tower_param_ids(b, cfg, layer, "ffn_norm"), gq,
                                        cfg.rms_eps);
    const Tape::Id gate = t.silu(t.group_matmul(xf, tower_param_ids(b, cfg, layer, "w_gate"), gq));
    const Tape::Id up = t.group_matmul(xf, tower_param_ids(b, cfg, layer, "w_up"), gq);
    const Tape::Id down = t.group_matmul(t.mul(gate, up),
                                         tower_param_ids(b, cfg, layer, "w_down"), gq);
    return t.add(h1, down);
}

// Layers are 1-based here: run_self_layers(..., 1, N-D, ...) is the
// conditioning stage, (N-D+1, N) the denoising stage.
inline Tape::Id run_self_layers(Tape& t, const BoundParams& b, const ModelConfig& cfg,
                                Tape::Id h, int from, int to, const Groups& g, const Coords& c,
                                const MaskPtr& mask) {
    for (int L = from; L <= to; ++L) h = decoder_layer(t, b, cfg, L - 1, h, h, g, g, c, c, mask);
    return h;
}

inline Tape::Id final_norm(Tape& t, const BoundParams& b, const ModelConfig& cfg, Tape::Id h,
                           const Groups& g) {
    std::array<Tape::Id, 3> norms{};
    for (int tw = 0; tw < 3; ++tw) norms[tw] = b.id(final_norm_name(cfg, tw));
    return t.group_rmsnorm(h, norms, g, cfg.rms_eps);
}

// ---------------------------------------------------------------------------
// Conditioning source selection
// ---------------------------------------------------------------------------

// The conditioning stage's hidden rows that feed NOISY(block_id): clean rows
// of the previous block when present, the previous noisy rows otherwise, and
// the begin-of-image row (broadcast) for the first block.
struct CondSource {
    bool from_boi = false;
    std::vector<int> rows;  // empty when from_boi
};

inline CondSource cond_source(const SequencePlan& plan, int block_id) {
    CondSource s;
    if (block_id == 0) {
        s.from_boi = true;
        return s;
    }
    const int prev = block_id - 1;
    if (plan.clean_begin[prev] >= 0) {
        s.rows = plan.block_tokens(Role::CleanBlock, prev);
    } else if (plan.noisy_begin[prev] >= 0) {
        s.rows = plan.block_tokens(Role::NoisyBlock, prev);
    } else {
        s.from_boi = true;  // previous block absent from this plan
    }
    return s;
}

// ---------------------------------------------------------------------------
// Full training-style forward pass
// ---------------------------------------------------------------------------

inline ForwardOutputs full_forward(Tape& t, const BoundParams& b, const ModelConfig& cfg,
                                   const SequencePlan& plan, const ForwardBatch& batch,
                                   const MaskPtr& mask, bool input_grads = false) {
    if (mask->rows != plan.seq_len || mask->cols != plan.seq_len)
        throw ShapeMismatch("full_forward: mask shape vs plan");
    const Groups groups = tower_groups(plan);
    const Coords coords = plan_coords(plan);
    const int n_ar = cfg.ar_layers();

    ForwardOutputs out;
    out.h0 = embed_inputs(t, b, cfg, plan, batch, &out, input_grads);
    Tape::Id h = run_self_layers(t, b, cfg, out.h0, 1, n_ar, groups, coords, mask);
    out.h_ar = h;

    const std::vector<int> noisy_ids = plan.noisy_block_ids();
    if (!noisy_ids.empty()) {
        const bool live_cond = cfg.ar_condition && n_ar > 0;
        for (int id : noisy_ids) {
            Tape::Id cond;
            if (!live_cond) {
                cond = t.zeros(plan.tokens_per_block, cfg.hidden);
            } else {
                const CondSource src = cond_source(plan, id);
                cond = src.from_boi ? t.repeat_row(h, plan.boi_pos, plan.tokens_per_block)
                                    : t.select_rows(h, src.rows);
            }
            out.conditions.push_back(cond);
        }
        out.cond_cat = out.conditions.size() == 1 ? out.conditions[0]
                                                  : t.concat_rows(out.conditions);

        std::vector<int> noisy_rows;
        for (int id : noisy_ids) {
            for (int r : plan.block_tokens(Role::NoisyBlock, id)) noisy_rows.push_back(r);
        }
        if (n_ar > 0) {
            // Denoising-stage entry: discard the conditioning stage's noisy-row
            // activations and restart from the embedded noisy latent plus the
            // per-block condition.
            const Tape::Id entry = t.add(t.select_rows(out.h0, noisy_rows), out.cond_cat);
            h = t.overwrite_rows(h, noisy_rows, entry);
        }
        h = run_self_layers(t, b, cfg, h, n_ar + 1, cfg.n_layers, groups, coords, mask);
        out.h_final = final_norm(t, b, cfg, h, groups);
        out.z_hat = t.matmul(t.select_rows(out.h_final, noisy_rows), b.id("head.out_proj"));
        out.cond_readout = t.matmul(out.cond_cat, b.id("head.cond_proj"));
    } else {
        h = run_self_layers(t, b, cfg, h, n_ar + 1, cfg.n_layers, groups, coords, mask);
        out.h_final = final_norm(t, b, cfg, h, groups);
    }

    const std::vector<int> clean_ids = plan.clean_block_ids();
    if (!clean_ids.empty()) {
        std::vector<int> clean_rows;
        for (int id : clean_ids) {
            for (int r : plan.block_tokens(Role::CleanBlock, id)) clean_rows.push_back(r);
        }
        out.z_clean = t.matmul(t.select_rows(out.h_final, clean_rows), b.id("head.clean_proj"));
    }

    out.logit_rows = lm_logit_rows(plan);
    if (!out.logit_rows.empty()) {
        out.logits = t.matmul(t.select_rows(out.h_final, out.logit_rows), b.id("head.lm"));
    }
    return out;
}

}  // namespace ardiff

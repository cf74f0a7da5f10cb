#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ardiff/errors.hpp"
#include "ardiff/mat.hpp"

namespace ardiff {

// ---------------------------------------------------------------------------
// Block layout: partition of a latent patch grid into equal rectangular
// blocks, traversed in raster (row-major) order.
// ---------------------------------------------------------------------------

struct BlockLayout {
    int grid_h = 0;   // patch rows
    int grid_w = 0;   // patch cols
    int block_h = 0;  // patch rows per block
    int block_w = 0;  // patch cols per block
    int ar_length = 0;
    int blocks_y = 0;  // block rows
    int blocks_x = 0;  // block cols
    std::vector<std::pair<int, int>> block_order;  // (block_row, block_col), raster

    int tokens_per_block() const { return block_h * block_w; }
    int grid_tokens() const { return grid_h * grid_w; }

    // top-left patch coordinate of block i
    std::pair<int, int> block_origin(int i) const {
        return {block_order[i].first * block_h, block_order[i].second * block_w};
    }

    // global (row, col) of patch p (raster within block) of block i
    std::pair<int, int> patch_coord(int block, int p) const {
        auto [r0, c0] = block_origin(block);
        return {r0 + p / block_w, c0 + p % block_w};
    }
};

// Chooses the per-axis block counts whose blocks are as square as possible;
// ties break toward row-major strips (more block rows).
inline BlockLayout build_block_layout(int grid_h, int grid_w, int ar_length) {
    if (grid_h <= 0 || grid_w <= 0 || ar_length <= 0) {
        throw NonDivisibleGrid("build_block_layout: non-positive argument");
    }
    int best_r = -1, best_c = -1, best_score = -1;
    for (int r = 1; r <= ar_length; ++r) {
        if (ar_length % r != 0) continue;
        const int c = ar_length / r;
        if (grid_h % r != 0 || grid_w % c != 0) continue;
        const int bh = grid_h / r, bw = grid_w / c;
        const int score = std::abs(bh - bw);
        if (best_r < 0 || score < best_score || (score == best_score && r > best_r)) {
            best_r = r;
            best_c = c;
            best_score = score;
        }
    }
    if (best_r < 0) {
        throw NonDivisibleGrid("build_block_layout: no equal partition of " +
                               std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                               " into " + std::to_string(ar_length) + " blocks");
    }
    BlockLayout lay;
    lay.grid_h = grid_h;
    lay.grid_w = grid_w;
    lay.blocks_y = best_r;
    lay.blocks_x = best_c;
    lay.block_h = grid_h / best_r;
    lay.block_w = grid_w / best_c;
    lay.ar_length = ar_length;
    lay.block_order.reserve(ar_length);
    for (int by = 0; by < best_r; ++by)
        for (int bx = 0; bx < best_c; ++bx) lay.block_order.emplace_back(by, bx);
    return lay;
}

// ---------------------------------------------------------------------------
// Sequence plan: the ordered multimodal token sequence with roles, block ids
// and 2-D rotary coordinates. Text tokens live on axis 0 only.
// ---------------------------------------------------------------------------

enum class Role : uint8_t { Text, Boi, CleanBlock, NoisyBlock, Eoi };

inline bool is_text_family(Role r) { return r == Role::Text || r == Role::Boi || r == Role::Eoi; }

struct PlanEntry {
    Role role;
    int block_index;  // -1 for text-family entries
    int first_token;  // offset of the entry's first token in the flat sequence
    int token_count;
};

struct SequencePlan {
    std::vector<PlanEntry> entries;
    int seq_len = 0;
    int text_len = 0;
    int tokens_per_block = 0;
    bool clean_enabled = false;
    bool has_image_span = false;

    // flat per-token views
    std::vector<Role> role;
    std::vector<int> block;  // -1 for text-family tokens
    std::vector<int> coord0;
    std::vector<int> coord1;

    // per block id -> first token offset, or -1 when the group is absent
    std::vector<int> clean_begin;
    std::vector<int> noisy_begin;
    int boi_pos = -1;
    int eoi_pos = -1;

    std::vector<int> tokens_of(Role r) const {
        std::vector<int> out;
        for (int p = 0; p < seq_len; ++p)
            if (role[p] == r) out.push_back(p);
        return out;
    }

    std::vector<int> block_tokens(Role r, int block_id) const {
        const auto& begin = (r == Role::CleanBlock) ? clean_begin : noisy_begin;
        std::vector<int> out(tokens_per_block);
        for (int p = 0; p < tokens_per_block; ++p) out[p] = begin[block_id] + p;
        return out;
    }

    std::vector<int> noisy_block_ids() const {
        std::vector<int> out;
        for (size_t i = 0; i < noisy_begin.size(); ++i)
            if (noisy_begin[i] >= 0) out.push_back(static_cast<int>(i));
        return out;
    }

    std::vector<int> clean_block_ids() const {
        std::vector<int> out;
        for (size_t i = 0; i < clean_begin.size(); ++i)
            if (clean_begin[i] >= 0) out.push_back(static_cast<int>(i));
        return out;
    }
};

// General builder used by both training plans and the sampler's partial
// sequences. clean_ids and noisy_ids must be strictly increasing block ids.
inline SequencePlan make_plan(const BlockLayout& layout, int text_len,
                              std::span<const int> clean_ids, std::span<const int> noisy_ids,
                              bool include_eoi = true) {
    if (text_len < 0) throw InvalidRange("make_plan: text_len < 0");
    auto check_ids = [&](std::span<const int> ids, const char* what) {
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= layout.ar_length)
                throw InvalidRange(std::string(what) + ": block id out of range");
            if (i > 0 && ids[i] <= ids[i - 1])
                throw InvalidRange(std::string(what) + ": block ids must increase");
        }
    };
    check_ids(clean_ids, "make_plan clean_ids");
    check_ids(noisy_ids, "make_plan noisy_ids");

    SequencePlan plan;
    plan.text_len = text_len;
    plan.tokens_per_block = layout.tokens_per_block();
    plan.clean_enabled = !clean_ids.empty();
    plan.has_image_span = !clean_ids.empty() || !noisy_ids.empty();
    plan.clean_begin.assign(layout.ar_length, -1);
    plan.noisy_begin.assign(layout.ar_length, -1);

    auto push_tokens = [&](Role r, int block_id, int count, auto coord_fn) {
        PlanEntry e{r, block_id, plan.seq_len, count};
        plan.entries.push_back(e);
        for (int p = 0; p < count; ++p) {
            auto [c0, c1] = coord_fn(p);
            plan.role.push_back(r);
            plan.block.push_back(block_id);
            plan.coord0.push_back(c0);
            plan.coord1.push_back(c1);
        }
        plan.seq_len += count;
        return e.first_token;
    };

    for (int i = 0; i < text_len; ++i)
        push_tokens(Role::Text, -1, 1, [&](int) { return std::pair{i, 0}; });
    if (plan.has_image_span) {
        plan.boi_pos =
            push_tokens(Role::Boi, -1, 1, [&](int) { return std::pair{text_len, 0}; });
        for (int id : clean_ids) {
            plan.clean_begin[id] = push_tokens(Role::CleanBlock, id, plan.tokens_per_block,
                                               [&](int p) { return layout.patch_coord(id, p); });
        }
        for (int id : noisy_ids) {
            plan.noisy_begin[id] = push_tokens(Role::NoisyBlock, id, plan.tokens_per_block,
                                               [&](int p) { return layout.patch_coord(id, p); });
        }
        if (include_eoi) {
            plan.eoi_pos =
                push_tokens(Role::Eoi, -1, 1, [&](int) { return std::pair{text_len + 1, 0}; });
        }
    }
    return plan;
}

// The canonical training plan: text first, one BOI, every clean block (when
// enabled) ahead of every noisy block, EOI last.
inline SequencePlan plan_sequence(const BlockLayout& layout, int text_len,
                                  bool clean_blocks_enabled) {
    std::vector<int> all(layout.ar_length);
    for (int i = 0; i < layout.ar_length; ++i) all[i] = i;
    std::vector<int> clean = clean_blocks_enabled ? all : std::vector<int>{};
    return make_plan(layout, text_len, clean, all, true);
}

// Pure-text plan (no image span, no delimiters).
inline SequencePlan plan_text_only(int text_len) {
    BlockLayout dummy = build_block_layout(1, 1, 1);
    return make_plan(dummy, text_len, {}, {}, false);
}

// ---------------------------------------------------------------------------
// Latent block split / join
// ---------------------------------------------------------------------------

struct LatentBlock {
    Mat values;  // (block_h * block_w, channels), raster within the block
    int block_index = -1;
};

inline std::vector<LatentBlock> split_blocks(const Mat& grid, const BlockLayout& layout) {
    if (grid.rows != layout.grid_tokens()) {
        throw ShapeMismatch("split_blocks: grid rows " + std::to_string(grid.rows) +
                            " != " + std::to_string(layout.grid_tokens()));
    }
    std::vector<LatentBlock> out;
    out.reserve(layout.ar_length);
    for (int i = 0; i < layout.ar_length; ++i) {
        LatentBlock b;
        b.block_index = i;
        b.values = Mat(layout.tokens_per_block(), grid.cols);
        for (int p = 0; p < layout.tokens_per_block(); ++p) {
            auto [r, c] = layout.patch_coord(i, p);
            const double* src = grid.row_ptr(r * layout.grid_w + c);
            std::copy(src, src + grid.cols, b.values.row_ptr(p));
        }
        out.push_back(std::move(b));
    }
    return out;
}

inline Mat join_blocks(const std::vector<LatentBlock>& blocks, const BlockLayout& layout) {
    if (static_cast<int>(blocks.size()) != layout.ar_length) {
        throw ShapeMismatch("join_blocks: expected " + std::to_string(layout.ar_length) +
                            " blocks, got " + std::to_string(blocks.size()));
    }
    const int channels = blocks.empty() ? 0 : blocks[0].values.cols;
    Mat grid(layout.grid_tokens(), channels);
    std::vector<char> seen(layout.ar_length, 0);
    for (const auto& b : blocks) {
        if (b.block_index < 0 || b.block_index >= layout.ar_length || seen[b.block_index]) {
            throw ShapeMismatch("join_blocks: bad or duplicate block index");
        }
        seen[b.block_index] = 1;
        require_shape(b.values, layout.tokens_per_block(), channels, "join_blocks block");
        for (int p = 0; p < layout.tokens_per_block(); ++p) {
            auto [r, c] = layout.patch_coord(b.block_index, p);
            const double* src = b.values.row_ptr(p);
            std::copy(src, src + channels, grid.row_ptr(r * layout.grid_w + c));
        }
    }
    return grid;
}

}  // namespace ardiff

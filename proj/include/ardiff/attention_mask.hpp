#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ardiff/errors.hpp"
#include "ardiff/layout.hpp"

namespace ardiff {

enum class MaskMode { Full, MlpAblation };

// Boolean attention matrix; allowed(q, k) means query q may attend to key k.
struct AttentionMask {
    int seq_len = 0;
    std::vector<uint8_t> allowed;

    AttentionMask() = default;
    explicit AttentionMask(int n) : seq_len(n), allowed(static_cast<size_t>(n) * n, 0) {}

    bool at(int q, int k) const { return allowed[static_cast<size_t>(q) * seq_len + k] != 0; }
    void set(int q, int k, bool v) {
        allowed[static_cast<size_t>(q) * seq_len + k] = v ? 1 : 0;
    }
};

// Hybrid mask: causal across blocks, bidirectional within a block, clean
// prefix visible to later noisy blocks, noisy blocks invisible to everyone
// else. MlpAblation restricts noisy queries to their own block.
//
// Fills the matrix entry-pair-wise; mask_oracle below re-derives the same
// rules per token pair and is kept as an independent check.
inline AttentionMask build_mask(const SequencePlan& plan, MaskMode mode) {
    AttentionMask m(plan.seq_len);
    for (const PlanEntry& qe : plan.entries) {
        for (const PlanEntry& ke : plan.entries) {
            // decide the relation for the whole entry pair, then fill
            bool all = false;       // every (q, k) in the pair allowed
            bool causal = false;    // token-level k <= q within the pair
            switch (qe.role) {
                case Role::Text:
                case Role::Boi:
                    causal = (ke.role == Role::Text || ke.role == Role::Boi);
                    break;
                case Role::Eoi:
                    all = (ke.role == Role::Text || ke.role == Role::Boi ||
                           ke.role == Role::CleanBlock || ke.role == Role::Eoi);
                    break;
                case Role::CleanBlock:
                    if (ke.role == Role::Text || ke.role == Role::Boi) all = true;
                    else if (ke.role == Role::CleanBlock) all = (ke.block_index <= qe.block_index);
                    break;
                case Role::NoisyBlock:
                    if (mode == MaskMode::MlpAblation) {
                        all = (ke.role == Role::NoisyBlock && ke.block_index == qe.block_index);
                    } else {
                        if (ke.role == Role::Text || ke.role == Role::Boi) all = true;
                        else if (ke.role == Role::CleanBlock)
                            all = (ke.block_index < qe.block_index);
                        else if (ke.role == Role::NoisyBlock)
                            all = (ke.block_index == qe.block_index);
                    }
                    break;
            }
            if (!all && !causal) continue;
            for (int q = qe.first_token; q < qe.first_token + qe.token_count; ++q) {
                for (int k = ke.first_token; k < ke.first_token + ke.token_count; ++k) {
                    if (all || k <= q) m.set(q, k, true);
                }
            }
        }
    }
    // every token attends at least to itself
    for (int q = 0; q < plan.seq_len; ++q) {
        bool any = false;
        for (int k = 0; k < plan.seq_len; ++k) any = any || m.at(q, k);
        if (!any) throw Error("build_mask: empty row " + std::to_string(q));
    }
    return m;
}

// Direct per-pair evaluation of the masking rules, written independently of
// build_mask so the two can be compared everywhere.
inline bool mask_oracle(const SequencePlan& plan, MaskMode mode, int q, int k) {
    const Role qr = plan.role[q], kr = plan.role[k];
    const int qb = plan.block[q], kb = plan.block[k];
    if (q == k) return true;

    if (qr == Role::Text || qr == Role::Boi) {
        // causal over preceding text/BOI tokens
        return (kr == Role::Text || kr == Role::Boi) && k < q;
    }
    if (qr == Role::Eoi) {
        // everything clean/text before it
        return kr == Role::Text || kr == Role::Boi || kr == Role::CleanBlock;
    }
    if (qr == Role::CleanBlock) {
        if (kr == Role::Text || kr == Role::Boi) return true;
        if (kr == Role::CleanBlock) return kb <= qb;  // earlier blocks + own block
        return false;                                 // never noisy, never EOI
    }
    // noisy query
    if (mode == MaskMode::MlpAblation) {
        return kr == Role::NoisyBlock && kb == qb;
    }
    if (kr == Role::Text || kr == Role::Boi) return true;
    if (kr == Role::CleanBlock) return kb < qb;  // preceding clean blocks only
    if (kr == Role::NoisyBlock) return kb == qb;
    return false;
}

inline const char* role_glyph(Role r) {
    switch (r) {
        case Role::Text: return "T";
        case Role::Boi: return "B";
        case Role::CleanBlock: return "C";
        case Role::NoisyBlock: return "N";
        case Role::Eoi: return "E";
    }
    return "?";
}

// Text rendering for the mask-dump CLI. blocks_only drops text-family
// rows/columns so only the image-block submatrix is shown.
inline std::string render_mask(const SequencePlan& plan, const AttentionMask& m,
                               bool blocks_only = false) {
    std::vector<int> idx;
    for (int p = 0; p < plan.seq_len; ++p) {
        if (blocks_only && is_text_family(plan.role[p])) continue;
        idx.push_back(p);
    }
    std::string out;
    out += "     ";
    for (int p : idx) out += std::string(role_glyph(plan.role[p])) + " ";
    out += "\n";
    for (int q : idx) {
        std::string label = role_glyph(plan.role[q]);
        if (plan.block[q] >= 0) label += std::to_string(plan.block[q]);
        while (label.size() < 4) label += ' ';
        out += label + " ";
        for (int k : idx) out += m.at(q, k) ? "1 " : ". ";
        out += "\n";
    }
    return out;
}

}  // namespace ardiff

#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "ardiff/attention_mask.hpp"
#include "ardiff/layout.hpp"

using namespace ardiff;

namespace {

// Extracts the image-token submatrix (clean rows then noisy rows) as a string
// of '1'/'.' per row for compact frozen comparisons.
std::vector<std::string> image_submatrix(const SequencePlan& plan, const AttentionMask& m) {
    std::vector<int> idx;
    for (int p = 0; p < plan.seq_len; ++p)
        if (!is_text_family(plan.role[p])) idx.push_back(p);
    std::vector<std::string> rows;
    for (int q : idx) {
        std::string row;
        for (int k : idx) row += m.at(q, k) ? '1' : '.';
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST(AttentionMask, FrozenSingleTokenBlocks) {
    // Four 1x1 blocks with clean copies: the image submatrix is the
    // lower-triangular clean prefix stacked over noisy rows that see strictly
    // earlier clean blocks plus themselves.
    const BlockLayout lay = build_block_layout(4, 1, 4);
    const SequencePlan plan = plan_sequence(lay, 0, true);
    const AttentionMask m = build_mask(plan, MaskMode::Full);
    const std::vector<std::string> want{
        "1.......",
        "11......",
        "111.....",
        "1111....",
        "....1...",
        "1....1..",
        "11....1.",
        "111....1",
    };
    EXPECT_EQ(image_submatrix(plan, m), want);
}

TEST(AttentionMask, FrozenTwoTokenBlocks) {
    // Two blocks of two tokens. In the image submatrix (C0 C0 C1 C1 N0 N0 N1
    // N1), the second noisy block attends the first clean block and itself.
    const BlockLayout lay = build_block_layout(2, 2, 2);
    const SequencePlan plan = plan_sequence(lay, 0, true);
    ASSERT_EQ(lay.tokens_per_block(), 2);
    const AttentionMask m = build_mask(plan, MaskMode::Full);
    const std::vector<std::string> want{
        "11......",
        "11......",
        "1111....",
        "1111....",
        "....11..",
        "....11..",
        "11....11",
        "11....11",
    };
    EXPECT_EQ(image_submatrix(plan, m), want);

    const AttentionMask mlp = build_mask(plan, MaskMode::MlpAblation);
    const std::vector<std::string> want_mlp{
        "11......",
        "11......",
        "1111....",
        "1111....",
        "....11..",
        "....11..",
        "......11",
        "......11",
    };
    EXPECT_EQ(image_submatrix(plan, mlp), want_mlp);
}

TEST(AttentionMask, TextFamilyRules) {
    const BlockLayout lay = build_block_layout(2, 2, 2);
    const SequencePlan plan = plan_sequence(lay, 3, true);
    const AttentionMask m = build_mask(plan, MaskMode::Full);

    // Text and BOI are causal among themselves.
    EXPECT_TRUE(m.at(0, 0));
    EXPECT_FALSE(m.at(0, 1));
    EXPECT_TRUE(m.at(2, 0));
    EXPECT_TRUE(m.at(plan.boi_pos, 2));
    EXPECT_FALSE(m.at(2, plan.boi_pos));

    // Noisy queries see the whole text prefix; clean queries too.
    const int n0 = plan.noisy_begin[0];
    const int c0 = plan.clean_begin[0];
    for (int k = 0; k <= plan.boi_pos; ++k) {
        EXPECT_TRUE(m.at(n0, k));
        EXPECT_TRUE(m.at(c0, k));
    }

    // EOI sees text, BOI and clean blocks but never noisy rows.
    for (int k = 0; k <= plan.boi_pos; ++k) EXPECT_TRUE(m.at(plan.eoi_pos, k));
    EXPECT_TRUE(m.at(plan.eoi_pos, plan.clean_begin[1]));
    EXPECT_FALSE(m.at(plan.eoi_pos, plan.noisy_begin[0]));

    // No text-family or clean query ever attends a noisy key.
    for (int q = 0; q < plan.seq_len; ++q) {
        if (plan.role[q] == Role::NoisyBlock) continue;
        for (int id : plan.noisy_block_ids()) {
            for (int k : plan.block_tokens(Role::NoisyBlock, id)) {
                EXPECT_FALSE(m.at(q, k)) << "q=" << q << " k=" << k;
            }
        }
    }
}

TEST(AttentionMask, NoisyBlocksMutuallyInvisible) {
    const BlockLayout lay = build_block_layout(4, 4, 4);
    const SequencePlan plan = plan_sequence(lay, 1, false);
    for (MaskMode mode : {MaskMode::Full, MaskMode::MlpAblation}) {
        const AttentionMask m = build_mask(plan, mode);
        for (int qi : plan.noisy_block_ids()) {
            for (int ki : plan.noisy_block_ids()) {
                const bool same = qi == ki;
                for (int q : plan.block_tokens(Role::NoisyBlock, qi)) {
                    for (int k : plan.block_tokens(Role::NoisyBlock, ki)) {
                        EXPECT_EQ(m.at(q, k), same);
                    }
                }
            }
        }
    }
}

TEST(AttentionMask, WithinBlockBidirectional) {
    const BlockLayout lay = build_block_layout(4, 4, 2);
    const SequencePlan plan = plan_sequence(lay, 0, true);
    const AttentionMask m = build_mask(plan, MaskMode::Full);
    for (Role r : {Role::CleanBlock, Role::NoisyBlock}) {
        for (int id : {0, 1}) {
            const std::vector<int> toks = plan.block_tokens(r, id);
            for (int q : toks)
                for (int k : toks) EXPECT_TRUE(m.at(q, k));
        }
    }
}

TEST(AttentionMask, EveryRowSelfAttends) {
    const BlockLayout lay = build_block_layout(4, 4, 4);
    for (bool clean : {false, true}) {
        const SequencePlan plan = plan_sequence(lay, 2, clean);
        for (MaskMode mode : {MaskMode::Full, MaskMode::MlpAblation}) {
            const AttentionMask m = build_mask(plan, mode);
            for (int q = 0; q < plan.seq_len; ++q) EXPECT_TRUE(m.at(q, q));
        }
    }
}

TEST(AttentionMask, MatchesOracleOnRandomPlans) {
    std::mt19937 rng(20240817);
    struct GridSpec {
        int h, w;
        std::vector<int> lengths;
    };
    const std::vector<GridSpec> grids{
        {2, 2, {1, 2, 4}},
        {4, 1, {1, 2, 4}},
        {4, 4, {1, 2, 4, 8, 16}},
        {2, 8, {1, 2, 4, 8}},
    };
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const GridSpec& g = grids[rng() % grids.size()];
        const int l = g.lengths[rng() % g.lengths.size()];
        const BlockLayout lay = build_block_layout(g.h, g.w, l);
        const int text_len = static_cast<int>(rng() % 4);

        // Random strictly-increasing subsets for a partial plan, or the full
        // training plan on every third trial.
        SequencePlan plan;
        if (trial % 3 == 0) {
            plan = plan_sequence(lay, text_len, rng() % 2 == 0);
        } else {
            std::vector<int> clean, noisy;
            for (int i = 0; i < l; ++i) {
                if (rng() % 2 == 0) clean.push_back(i);
                if (rng() % 2 == 0) noisy.push_back(i);
            }
            if (clean.empty() && noisy.empty()) noisy.push_back(static_cast<int>(rng() % l));
            plan = make_plan(lay, text_len, clean, noisy, rng() % 2 == 0);
        }
        const MaskMode mode = rng() % 2 == 0 ? MaskMode::Full : MaskMode::MlpAblation;
        const AttentionMask m = build_mask(plan, mode);
        for (int q = 0; q < plan.seq_len; ++q) {
            for (int k = 0; k < plan.seq_len; ++k) {
                ASSERT_EQ(m.at(q, k), mask_oracle(plan, mode, q, k))
                    << "trial=" << trial << " q=" << q << " k=" << k;
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 100000);
}

TEST(AttentionMask, RenderMatchesGlyphLayout) {
    const BlockLayout lay = build_block_layout(2, 1, 2);
    const SequencePlan plan = plan_sequence(lay, 1, true);
    const AttentionMask m = build_mask(plan, MaskMode::Full);
    const std::string full = render_mask(plan, m, false);
    EXPECT_EQ(full.substr(0, 5), "     ");
    EXPECT_NE(full.find("T "), std::string::npos);
    EXPECT_NE(full.find("B "), std::string::npos);
    const std::string blocks = render_mask(plan, m, true);
    EXPECT_EQ(blocks.find('T'), std::string::npos);
    EXPECT_EQ(blocks.find('B'), std::string::npos);
    EXPECT_EQ(blocks.find('E'), std::string::npos);
    EXPECT_NE(blocks.find("C0"), std::string::npos);
    EXPECT_NE(blocks.find("N1"), std::string::npos);
}

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "ardiff/attention_mask.hpp"
#include "ardiff/backbone.hpp"
#include "ardiff/objectives.hpp"
#include "ardiff/rng.hpp"

using namespace ardiff;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab = 8;
    cfg.hidden = 8;
    cfg.n_layers = 2;
    cfg.diffusion_depth = 1;
    cfg.n_heads = 2;
    cfg.channels = 3;
    cfg.max_text_len = 2;
    cfg.grid_h = 2;
    cfg.grid_w = 2;
    cfg.ar_length = 2;
    return cfg;
}

Mat random_mat(int rows, int cols, uint64_t salt, double scale = 1.0) {
    Mat m(rows, cols);
    const RngStream s(17, RngRole::Holdout, salt, 2);
    for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = scale * s.normal(i);
    return m;
}

// Logit row with the stated cross-entropy at `target`: put mass a on the
// target slot and zero elsewhere so that CE = nll exactly in closed form.
void set_ce_row(Mat& logits, int row, int target, double nll) {
    const double p = std::exp(-nll);
    const int v = logits.cols;
    for (int c = 0; c < v; ++c) logits(row, c) = 0.0;
    logits(row, target) = std::log(p * (v - 1) / (1.0 - p));
}

}  // namespace

TEST(TermMasks, FollowsPlanStructure) {
    const BlockLayout lay4 = build_block_layout(4, 4, 4);
    const SequencePlan p4 = plan_sequence(lay4, 2, true);
    const TermMasks m4 = term_masks(p4);
    EXPECT_EQ(m4.lm_rows.size(), 3u);  // two text rows + end-of-image predictor
    EXPECT_EQ(m4.noisy_rows.size(), 4u * p4.tokens_per_block);
    EXPECT_EQ(m4.hidden_blocks, (std::vector<int>{0, 1, 2, 3}));
    EXPECT_EQ(m4.tower_blocks, (std::vector<int>{0, 1, 2}));

    const BlockLayout lay1 = build_block_layout(4, 4, 1);
    const TermMasks m1 = term_masks(plan_sequence(lay1, 1, true));
    EXPECT_TRUE(m1.tower_blocks.empty());  // a single block has no successor

    const SequencePlan p0 = plan_sequence(lay4, 0, true);
    EXPECT_TRUE(term_masks(p0).lm_rows.empty());

    const SequencePlan ptext = plan_text_only(3);
    const TermMasks mt = term_masks(ptext);
    EXPECT_EQ(mt.lm_rows.size(), 3u);
    EXPECT_TRUE(mt.noisy_rows.empty());
    EXPECT_TRUE(mt.hidden_blocks.empty());
}

TEST(LmTargets, ShiftStructure) {
    const BlockLayout lay = build_block_layout(2, 2, 2);
    const SequencePlan plan = plan_sequence(lay, 3, true);
    // Text predicts its successor, the last text token predicts begin-of-image,
    // and the final image row predicts end-of-image.
    EXPECT_EQ(lm_targets(plan, {3, 1, 2}, 6, 7), (std::vector<int>{1, 2, 6, 7}));

    const SequencePlan tplan = plan_text_only(3);
    EXPECT_EQ(lm_targets(tplan, {3, 1, 2}, 6, 7), (std::vector<int>{1, 2, -1}));

    EXPECT_THROW(lm_targets(plan, {1, 2}, 6, 7), ShapeMismatch);
}

TEST(TotalLoss, HandAssembledTermsSumExactly) {
    const ModelConfig cfg = tiny_config();
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 1, true);
    const int tpb = plan.tokens_per_block;

    GroundTruth truth;
    truth.text_ids = {2};
    truth.x0 = random_mat(cfg.ar_length * tpb, cfg.channels, 1);

    Tape t;
    ForwardOutputs fwd;

    Mat logits(2, cfg.vocab);  // one text row + the end-of-image predictor row
    set_ce_row(logits, 0, cfg.boi_id(), 0.7);
    set_ce_row(logits, 1, cfg.eoi_id(), 0.7);
    fwd.logits = t.leaf(std::move(logits));
    fwd.logit_rows = lm_logit_rows(plan);

    Mat z_hat = truth.x0;  // noisy blocks are 0..l-1, so rows align
    for (double& x : z_hat.v) x += 0.2;
    fwd.z_hat = t.leaf(std::move(z_hat));

    Mat readout = truth.x0;
    for (double& x : readout.v) x += 1.0;
    fwd.cond_readout = t.leaf(std::move(readout));

    Mat z_clean(2 * tpb, cfg.channels);  // block 0 rows predict block 1
    for (int p = 0; p < tpb; ++p)
        for (int c = 0; c < cfg.channels; ++c) {
            z_clean(p, c) = truth.x0(tpb + p, c) + 0.5;
            z_clean(tpb + p, c) = -9.0;  // last block is unsupervised
        }
    fwd.z_clean = t.leaf(std::move(z_clean));

    LossWeights w;
    w.text = 1.0;
    w.image = 5.0;
    w.hidden = 0.1;
    w.tower = 0.0;
    LossReport rep;
    const LossNodes nodes = total_loss(t, fwd, plan, cfg, truth, w, &rep);
    EXPECT_NEAR(t.val(nodes.text).v[0], 0.7, 1e-12);
    EXPECT_NEAR(t.val(nodes.image).v[0], 0.04, 1e-12);
    EXPECT_NEAR(t.val(nodes.hidden).v[0], 1.0, 1e-12);
    EXPECT_NEAR(t.val(nodes.tower).v[0], 0.25, 1e-12);
    EXPECT_NEAR(t.val(nodes.total).v[0], 1.0, 1e-12);
    EXPECT_EQ(rep.text_count, 2);
    EXPECT_EQ(rep.image_rows, 2 * tpb);
    EXPECT_EQ(rep.hidden_rows, 2 * tpb);
    EXPECT_EQ(rep.tower_rows, tpb);

    // Same outputs with the tower term switched on.
    w.tower = 0.4;
    const LossNodes nodes2 = total_loss(t, fwd, plan, cfg, truth, w);
    EXPECT_NEAR(t.val(nodes2.total).v[0], 1.1, 1e-12);
}

TEST(TotalLoss, DecompositionMatchesWeightedTerms) {
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 19);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 2, true);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    ForwardBatch batch;
    batch.text_ids = {1, 4};
    batch.clean = random_mat(2 * plan.tokens_per_block, cfg.channels, 2);
    batch.noisy = random_mat(2 * plan.tokens_per_block, cfg.channels, 3);
    batch.block_t = {250, 800};
    GroundTruth truth;
    truth.text_ids = batch.text_ids;
    truth.x0 = random_mat(cfg.ar_length * plan.tokens_per_block, cfg.channels, 4);

    Tape t;
    const BoundParams b = bind_params(t, params, false);
    const ForwardOutputs fwd = full_forward(t, b, cfg, plan, batch,
                                            std::make_shared<BoolMat>(full_mask_view(mask)));
    LossWeights w;
    w.text = 0.3;
    w.image = 2.5;
    w.hidden = 0.07;
    w.tower = 1.9;
    LossReport rep;
    const LossNodes nodes = total_loss(t, fwd, plan, cfg, truth, w, &rep);
    const double want = w.text * rep.text_nll + w.image * rep.image_mse +
                        w.hidden * rep.hidden_mse + w.tower * rep.tower_mse;
    EXPECT_NEAR(rep.total, want, 1e-12 * std::max(1.0, std::abs(want)));
    EXPECT_EQ(rep.total, t.val(nodes.total).v[0]);
    EXPECT_GT(rep.text_nll, 0.0);
    EXPECT_GT(rep.image_mse, 0.0);
    EXPECT_EQ(rep.text_count, 3);

    // All-zero weights collapse the total to exactly zero.
    const LossNodes zero = total_loss(t, fwd, plan, cfg, truth, LossWeights{0, 0, 0, 0});
    EXPECT_EQ(t.val(zero.total).v[0], 0.0);
}

TEST(TotalLoss, GradientsReachInputsThroughEveryTerm) {
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 23);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 1, true);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    ForwardBatch batch;
    batch.text_ids = {0};
    batch.clean = random_mat(2 * plan.tokens_per_block, cfg.channels, 5);
    batch.noisy = random_mat(2 * plan.tokens_per_block, cfg.channels, 6);
    batch.block_t = {100, 900};
    GroundTruth truth;
    truth.text_ids = batch.text_ids;
    truth.x0 = random_mat(cfg.ar_length * plan.tokens_per_block, cfg.channels, 7);

    Tape t;
    const BoundParams b = bind_params(t, params, true);
    const ForwardOutputs fwd = full_forward(t, b, cfg, plan, batch,
                                            std::make_shared<BoolMat>(full_mask_view(mask)));
    LossWeights w;
    w.tower = 0.5;  // enable all four terms
    const LossNodes nodes = total_loss(t, fwd, plan, cfg, truth, w);
    t.backward(nodes.total);
    double total_grad = 0.0;
    for (size_t i = 0; i < params.count(); ++i) {
        if (b.bound(i) && t.has_grad(b.ids[i]))
            for (double g : t.grad(b.ids[i]).v) total_grad += std::abs(g);
    }
    EXPECT_GT(total_grad, 0.0);
    EXPECT_TRUE(t.val(nodes.total).all_finite());
}

TEST(TotalLoss, EmptySupervisionOnlyForEnabledMissingTerms) {
    const ModelConfig cfg = tiny_config();
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 1, true);

    GroundTruth truth;
    truth.text_ids = {2};
    truth.x0 = random_mat(cfg.ar_length * plan.tokens_per_block, cfg.channels, 8);

    Tape t;
    ForwardOutputs fwd;  // logits only: no image-side outputs at all
    Mat logits(2, cfg.vocab, 0.0);
    fwd.logits = t.leaf(std::move(logits));
    fwd.logit_rows = lm_logit_rows(plan);

    LossWeights image_on{0.0, 5.0, 0.0, 0.0};
    EXPECT_THROW(total_loss(t, fwd, plan, cfg, truth, image_on), EmptySupervision);
    LossWeights hidden_on{0.0, 0.0, 0.1, 0.0};
    EXPECT_THROW(total_loss(t, fwd, plan, cfg, truth, hidden_on), EmptySupervision);

    LossWeights text_only{1.0, 0.0, 0.0, 0.0};
    const LossNodes nodes = total_loss(t, fwd, plan, cfg, truth, text_only);
    EXPECT_EQ(t.val(nodes.image).v[0], 0.0);
    EXPECT_EQ(t.val(nodes.hidden).v[0], 0.0);

    // A pure-text plan reports zero image terms even under default weights.
    const SequencePlan tplan = plan_text_only(2);
    GroundTruth ttruth;
    ttruth.text_ids = {1, 3};
    Tape t2;
    ForwardOutputs tfwd;
    Mat tlogits(2, cfg.vocab, 0.0);
    tfwd.logits = t2.leaf(std::move(tlogits));
    tfwd.logit_rows = lm_logit_rows(tplan);
    const LossNodes tnodes = total_loss(t2, tfwd, tplan, cfg, ttruth, LossWeights{});
    EXPECT_EQ(t2.val(tnodes.image).v[0], 0.0);
    EXPECT_EQ(t2.val(tnodes.hidden).v[0], 0.0);
    EXPECT_NEAR(t2.val(tnodes.text).v[0], std::log(cfg.vocab), 1e-12);

    EXPECT_THROW(LossWeights(-1.0, 5.0, 0.1, 0.0).validate(), ConfigError);
}

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

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
    const RngStream s(7, RngRole::Holdout, salt, 1);
    for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = scale * s.normal(i);
    return m;
}

ForwardBatch make_batch(const SequencePlan& plan, const ModelConfig& cfg, uint64_t salt) {
    ForwardBatch b;
    for (int i = 0; i < plan.text_len; ++i) b.text_ids.push_back(static_cast<int>((salt + i) % 4));
    const int tpb = plan.tokens_per_block;
    const int n_clean = static_cast<int>(plan.clean_block_ids().size());
    const int n_noisy = static_cast<int>(plan.noisy_block_ids().size());
    if (n_clean > 0) b.clean = random_mat(n_clean * tpb, cfg.channels, salt * 10 + 1);
    if (n_noisy > 0) b.noisy = random_mat(n_noisy * tpb, cfg.channels, salt * 10 + 2);
    for (int i = 0; i < n_noisy; ++i) b.block_t.push_back(100 + 37 * i);
    return b;
}

GroundTruth make_truth(const SequencePlan& plan, const ModelConfig& cfg,
                       const ForwardBatch& batch, uint64_t salt) {
    GroundTruth truth;
    truth.text_ids = batch.text_ids;
    truth.x0 = random_mat(cfg.ar_length * plan.tokens_per_block, cfg.channels, salt * 10 + 3);
    return truth;
}

Mat grad_of(Tape& t, const BoundParams& b, const std::string& name) {
    const int i = b.store->index_of(name);
    if (b.ids[i] < 0 || !t.has_grad(b.ids[i])) {
        const Mat& p = b.store->values[i];
        return Mat(p.rows, p.cols);
    }
    return t.grad(b.ids[i]);
}

double abs_sum(const Mat& m) {
    double s = 0.0;
    for (double x : m.v) s += std::abs(x);
    return s;
}

}  // namespace

TEST(Params, InitShapesAndDeterminism) {
    const ModelConfig cfg = tiny_config();
    const ParamStore p = init_params(cfg, 5);
    EXPECT_EQ(p.at("embed.token").rows, cfg.vocab);
    EXPECT_EQ(p.at("embed.token").cols, cfg.hidden);
    EXPECT_EQ(p.at("embed.patch").rows, cfg.channels);
    EXPECT_EQ(p.at("head.lm").cols, cfg.vocab);
    EXPECT_EQ(p.at("head.out_proj").cols, cfg.channels);
    EXPECT_TRUE(p.has("layers.0.text.wq"));
    EXPECT_TRUE(p.has("layers.1.noise.w_down"));
    EXPECT_TRUE(p.has("final.clean.norm"));

    // Norm gains start at one; weights are clipped truncated normals.
    for (double x : p.at("final.text.norm").v) EXPECT_EQ(x, 1.0);
    for (double x : p.at("embed.token").v) EXPECT_LE(std::abs(x), 2.0 * cfg.init_std);

    const ParamStore q = init_params(cfg, 5);
    for (size_t i = 0; i < p.count(); ++i) EXPECT_EQ(p.values[i].v, q.values[i].v);
    const ParamStore r = init_params(cfg, 6);
    EXPECT_NE(r.at("embed.token").v, p.at("embed.token").v);

    ModelConfig shared = cfg;
    shared.towers = TowerMode::Shared;
    const ParamStore ps = init_params(shared, 5);
    EXPECT_TRUE(ps.has("layers.0.shared.wq"));
    EXPECT_FALSE(ps.has("layers.0.text.wq"));
    EXPECT_LT(ps.count(), p.count());
}

TEST(Params, ValidationErrors) {
    ModelConfig cfg = tiny_config();
    cfg.n_heads = 3;  // hidden 8 not divisible
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.diffusion_depth = 3;  // > n_layers
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.diffusion_depth = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.hidden = 4;  // head_dim 2, not a multiple of 4
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.ar_length = 3;  // 2x2 grid cannot hold 3 blocks
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TimeFeatures, SinusoidalLayout) {
    const Mat f = time_feature_rows({0, 5}, 8);
    // t = 0: sin terms 0, cos terms 1.
    for (int k = 0; k < 4; ++k) {
        EXPECT_EQ(f(0, 2 * k), 0.0);
        EXPECT_EQ(f(0, 2 * k + 1), 1.0);
    }
    for (int k = 0; k < 4; ++k) {
        const double freq = std::pow(10000.0, -k / 4.0);
        EXPECT_NEAR(f(1, 2 * k), std::sin(5 * freq), 1e-15);
        EXPECT_NEAR(f(1, 2 * k + 1), std::cos(5 * freq), 1e-15);
    }
}

TEST(Embedding, RowCompositionMatchesPlan) {
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 3);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 2, true);
    const ForwardBatch batch = make_batch(plan, cfg, 1);

    Tape t;
    const BoundParams b = bind_params(t, params, false);
    const Tape::Id h0 = embed_inputs(t, b, cfg, plan, batch);
    const Mat& h = t.val(h0);
    ASSERT_EQ(h.rows, plan.seq_len);
    ASSERT_EQ(h.cols, cfg.hidden);

    const Mat& tok = params.at("embed.token");
    const Mat& patch = params.at("embed.patch");
    const Mat& tproj = params.at("time.proj");

    // Text rows are token-table rows.
    for (int i = 0; i < plan.text_len; ++i)
        for (int c = 0; c < cfg.hidden; ++c)
            EXPECT_EQ(h(i, c), tok(batch.text_ids[i], c));
    for (int c = 0; c < cfg.hidden; ++c) {
        EXPECT_EQ(h(plan.boi_pos, c), tok(cfg.boi_id(), c));
        EXPECT_EQ(h(plan.eoi_pos, c), tok(cfg.eoi_id(), c));
    }

    // Clean rows are latent-times-patch projections.
    const int tpb = plan.tokens_per_block;
    for (int j = 0; j < 2 * tpb; ++j) {
        const int row = plan.clean_begin[j / tpb] + j % tpb;
        for (int c = 0; c < cfg.hidden; ++c) {
            double want = 0.0;
            for (int k = 0; k < cfg.channels; ++k) want += batch.clean(j, k) * patch(k, c);
            EXPECT_NEAR(h(row, c), want, 1e-15);
        }
    }

    // Noisy rows additionally carry the block's timestep embedding.
    for (int j = 0; j < 2 * tpb; ++j) {
        const int block = j / tpb;
        const int row = plan.noisy_begin[block] + j % tpb;
        const Mat feat = time_feature_rows({batch.block_t[block]}, cfg.hidden);
        for (int c = 0; c < cfg.hidden; ++c) {
            double want = 0.0;
            for (int k = 0; k < cfg.channels; ++k) want += batch.noisy(j, k) * patch(k, c);
            for (int k = 0; k < cfg.hidden; ++k) want += feat(0, k) * tproj(k, c);
            EXPECT_NEAR(h(row, c), want, 1e-12);
        }
    }
}

TEST(Embedding, BatchValidation) {
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 3);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 1, true);
    Tape t;
    const BoundParams b = bind_params(t, params, false);

    ForwardBatch bad = make_batch(plan, cfg, 1);
    bad.text_ids = {1, 2};  // plan has one text token
    EXPECT_THROW(embed_inputs(t, b, cfg, plan, bad), ShapeMismatch);

    bad = make_batch(plan, cfg, 1);
    bad.text_ids = {cfg.vocab};
    EXPECT_THROW(embed_inputs(t, b, cfg, plan, bad), ShapeMismatch);

    bad = make_batch(plan, cfg, 1);
    bad.noisy = Mat(1, cfg.channels);
    EXPECT_THROW(embed_inputs(t, b, cfg, plan, bad), ShapeMismatch);

    bad = make_batch(plan, cfg, 1);
    bad.block_t.pop_back();
    EXPECT_THROW(embed_inputs(t, b, cfg, plan, bad), ShapeMismatch);
}

TEST(Forward, OutputShapesFullPlan) {
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 3);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 2, true);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    const ForwardBatch batch = make_batch(plan, cfg, 2);

    Tape t;
    const BoundParams b = bind_params(t, params, false);
    const ForwardOutputs out = full_forward(t, b, cfg, plan, batch,
                                            std::make_shared<BoolMat>(full_mask_view(mask)));
    const int tpb = plan.tokens_per_block;
    EXPECT_EQ(t.val(out.h_final).rows, plan.seq_len);
    EXPECT_EQ(t.val(out.z_hat).rows, 2 * tpb);
    EXPECT_EQ(t.val(out.z_hat).cols, cfg.channels);
    EXPECT_EQ(t.val(out.cond_readout).rows, 2 * tpb);
    EXPECT_EQ(t.val(out.z_clean).rows, 2 * tpb);
    ASSERT_EQ(out.conditions.size(), 2u);
    // Text rows plus the end-of-image predictor row.
    EXPECT_EQ(static_cast<int>(out.logit_rows.size()), plan.text_len + 1);
    EXPECT_EQ(out.logit_rows.back(), plan.eoi_pos - 1);
    EXPECT_EQ(t.val(out.logits).cols, cfg.vocab);
    EXPECT_TRUE(t.val(out.h_final).all_finite());
}

TEST(Forward, TextOnlyAndImageOnlyPlans) {
    ModelConfig cfg = tiny_config();
    cfg.max_text_len = 4;
    const ParamStore params = init_params(cfg, 3);

    const SequencePlan tplan = plan_text_only(4);
    const AttentionMask tmask = build_mask(tplan, cfg.mask_mode);
    ForwardBatch tb;
    tb.text_ids = {0, 1, 2, 3};
    Tape t1;
    const ForwardOutputs tout = full_forward(t1, bind_params(t1, params, false), cfg, tplan, tb,
                                             std::make_shared<BoolMat>(full_mask_view(tmask)));
    EXPECT_EQ(t1.val(tout.logits).rows, 4);
    EXPECT_EQ(tout.z_hat, -1);
    EXPECT_EQ(tout.cond_readout, -1);
    EXPECT_EQ(tout.z_clean, -1);
    EXPECT_TRUE(tout.conditions.empty());

    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan iplan = plan_sequence(lay, 0, true);
    const AttentionMask imask = build_mask(iplan, cfg.mask_mode);
    const ForwardBatch ib = make_batch(iplan, cfg, 4);
    Tape t2;
    const ForwardOutputs iout = full_forward(t2, bind_params(t2, params, false), cfg, iplan, ib,
                                             std::make_shared<BoolMat>(full_mask_view(imask)));
    EXPECT_EQ(iout.logits, -1);
    EXPECT_TRUE(iout.logit_rows.empty());
    EXPECT_GE(iout.z_hat, 0);
}

TEST(Forward, ConditionSourcesReadPreResetHiddenState) {
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 9);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 1, true);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    const ForwardBatch batch = make_batch(plan, cfg, 5);

    Tape t;
    const ForwardOutputs out = full_forward(t, bind_params(t, params, false), cfg, plan, batch,
                                            std::make_shared<BoolMat>(full_mask_view(mask)));
    const Mat& h_ar = t.val(out.h_ar);
    const int tpb = plan.tokens_per_block;

    // Block 0: begin-of-image row broadcast.
    const Mat& c0 = t.val(out.conditions[0]);
    for (int p = 0; p < tpb; ++p)
        for (int c = 0; c < cfg.hidden; ++c) EXPECT_EQ(c0(p, c), h_ar(plan.boi_pos, c));

    // Block 1: the previous block's clean rows.
    const Mat& c1 = t.val(out.conditions[1]);
    for (int p = 0; p < tpb; ++p)
        for (int c = 0; c < cfg.hidden; ++c)
            EXPECT_EQ(c1(p, c), h_ar(plan.clean_begin[0] + p, c));
}

TEST(Forward, CleanDisabledConditionsFallBackToNoisyRows) {
    ModelConfig cfg = tiny_config();
    cfg.clean_blocks = false;
    const ParamStore params = init_params(cfg, 9);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 1, false);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    const ForwardBatch batch = make_batch(plan, cfg, 6);

    Tape t;
    const ForwardOutputs out = full_forward(t, bind_params(t, params, false), cfg, plan, batch,
                                            std::make_shared<BoolMat>(full_mask_view(mask)));
    const Mat& h_ar = t.val(out.h_ar);
    const Mat& c1 = t.val(out.conditions[1]);
    for (int p = 0; p < plan.tokens_per_block; ++p)
        for (int c = 0; c < cfg.hidden; ++c)
            EXPECT_EQ(c1(p, c), h_ar(plan.noisy_begin[0] + p, c));
}

TEST(Forward, AllDiffusionAndConditionOffProduceZeroConditions) {
    for (int variant = 0; variant < 2; ++variant) {
        ModelConfig cfg = tiny_config();
        if (variant == 0) {
            cfg.diffusion_depth = cfg.n_layers;  // no conditioning stage left
        } else {
            cfg.ar_condition = false;
        }
        const ParamStore params = init_params(cfg, 4);
        const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
        const SequencePlan plan = plan_sequence(lay, 1, cfg.clean_blocks);
        const AttentionMask mask = build_mask(plan, cfg.mask_mode);
        const ForwardBatch batch = make_batch(plan, cfg, 7);
        Tape t;
        const ForwardOutputs out = full_forward(t, bind_params(t, params, false), cfg, plan,
                                                batch,
                                                std::make_shared<BoolMat>(full_mask_view(mask)));
        for (const Tape::Id cond : out.conditions) {
            for (double x : t.val(cond).v) EXPECT_EQ(x, 0.0) << "variant=" << variant;
        }
    }
}

TEST(Forward, NoisyPerturbationIsolatedByMask) {
    // Changing one noisy block's latent and timestep must leave every output
    // that the mask isolates bit-identical: other noisy blocks' predictions,
    // all clean-row outputs, and the text logits.
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 11);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 2, true);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    const auto mview = std::make_shared<BoolMat>(full_mask_view(mask));
    const int tpb = plan.tokens_per_block;

    const ForwardBatch a = make_batch(plan, cfg, 8);
    ForwardBatch b = a;
    for (int p = 0; p < tpb; ++p)
        for (int c = 0; c < cfg.channels; ++c) b.noisy(tpb + p, c) += 3.21 + p - c;
    b.block_t[1] += 100;

    Tape ta, tb;
    const ForwardOutputs oa = full_forward(ta, bind_params(ta, params, false), cfg, plan, a, mview);
    const ForwardOutputs ob = full_forward(tb, bind_params(tb, params, false), cfg, plan, b, mview);

    // Block 0 prediction rows unchanged, block 1 rows changed.
    const Mat& za = ta.val(oa.z_hat);
    const Mat& zb = tb.val(ob.z_hat);
    for (int p = 0; p < tpb; ++p)
        for (int c = 0; c < cfg.channels; ++c) EXPECT_EQ(za(p, c), zb(p, c));
    double diff1 = 0.0;
    for (int p = 0; p < tpb; ++p)
        for (int c = 0; c < cfg.channels; ++c) diff1 += std::abs(za(tpb + p, c) - zb(tpb + p, c));
    EXPECT_GT(diff1, 0.0);

    // Clean-tower outputs and conditions never see noisy rows.
    EXPECT_EQ(ta.val(oa.z_clean).v, tb.val(ob.z_clean).v);
    for (size_t j = 0; j < oa.conditions.size(); ++j)
        EXPECT_EQ(ta.val(oa.conditions[j]).v, tb.val(ob.conditions[j]).v);

    // Text logit rows are unaffected; only the end-of-image predictor row
    // (the last noisy token) may move.
    const Mat& la = ta.val(oa.logits);
    const Mat& lb = tb.val(ob.logits);
    for (int r = 0; r < plan.text_len; ++r)
        for (int c = 0; c < cfg.vocab; ++c) EXPECT_EQ(la(r, c), lb(r, c));
}

TEST(Forward, CleanPerturbationRespectsBlockCausality) {
    // Perturbing clean block 1 cannot reach block 0's condition (reads BOI)
    // or block 1's condition (reads clean block 0).
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 12);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 1, true);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    const auto mview = std::make_shared<BoolMat>(full_mask_view(mask));
    const int tpb = plan.tokens_per_block;

    const ForwardBatch a = make_batch(plan, cfg, 13);
    ForwardBatch b = a;
    for (int p = 0; p < tpb; ++p)
        for (int c = 0; c < cfg.channels; ++c) b.clean(tpb + p, c) -= 1.25 * (1 + p + c);

    Tape ta, tb;
    const ForwardOutputs oa = full_forward(ta, bind_params(ta, params, false), cfg, plan, a, mview);
    const ForwardOutputs ob = full_forward(tb, bind_params(tb, params, false), cfg, plan, b, mview);
    EXPECT_EQ(ta.val(oa.conditions[0]).v, tb.val(ob.conditions[0]).v);
    EXPECT_EQ(ta.val(oa.conditions[1]).v, tb.val(ob.conditions[1]).v);

    // z_clean rows of block 0 are also upstream of the perturbation.
    const Mat& ca = ta.val(oa.z_clean);
    const Mat& cb = tb.val(ob.z_clean);
    for (int p = 0; p < tpb; ++p)
        for (int c = 0; c < cfg.channels; ++c) EXPECT_EQ(ca(p, c), cb(p, c));
}

TEST(Forward, DeterministicAcrossRuns) {
    const ModelConfig cfg = tiny_config();
    const ParamStore params = init_params(cfg, 21);
    const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
    const SequencePlan plan = plan_sequence(lay, 2, true);
    const AttentionMask mask = build_mask(plan, cfg.mask_mode);
    const auto mview = std::make_shared<BoolMat>(full_mask_view(mask));
    const ForwardBatch batch = make_batch(plan, cfg, 14);

    Tape t1, t2;
    const ForwardOutputs o1 = full_forward(t1, bind_params(t1, params, false), cfg, plan, batch,
                                           mview);
    const ForwardOutputs o2 = full_forward(t2, bind_params(t2, params, false), cfg, plan, batch,
                                           mview);
    EXPECT_EQ(t1.val(o1.h_final).v, t2.val(o2.h_final).v);
    EXPECT_EQ(t1.val(o1.z_hat).v, t2.val(o2.z_hat).v);
    EXPECT_EQ(t1.val(o1.logits).v, t2.val(o2.logits).v);
}

TEST(Forward, TowerIsolationUnderSeparateTowers) {
    ModelConfig cfg = tiny_config();
    cfg.max_text_len = 4;
    ASSERT_EQ(cfg.towers, TowerMode::Separate);
    const ParamStore params = init_params(cfg, 31);

    // Pure-text task: every gradient outside the text tower, the token table
    // and the vocabulary head must be exactly zero.
    {
        const SequencePlan plan = plan_text_only(4);
        const AttentionMask mask = build_mask(plan, cfg.mask_mode);
        ForwardBatch batch;
        batch.text_ids = {1, 2, 3, 0};
        GroundTruth truth;
        truth.text_ids = batch.text_ids;
        LossWeights w;
        w.text = 1.0;
        w.image = 0.0;
        w.hidden = 0.0;
        w.tower = 0.0;

        Tape t;
        const BoundParams b = bind_params(t, params, true);
        const ForwardOutputs out = full_forward(t, b, cfg, plan, batch,
                                                std::make_shared<BoolMat>(full_mask_view(mask)));
        const LossNodes nodes = total_loss(t, out, plan, cfg, truth, w);
        t.backward(nodes.total);

        EXPECT_GT(abs_sum(grad_of(t, b, "layers.0.text.wq")), 0.0);
        EXPECT_GT(abs_sum(grad_of(t, b, "head.lm")), 0.0);
        EXPECT_GT(abs_sum(grad_of(t, b, "embed.token")), 0.0);
        for (const char* name :
             {"layers.0.clean.wq", "layers.0.noise.wq", "layers.1.clean.w_down",
              "layers.1.noise.wo", "final.clean.norm", "final.noise.norm", "embed.patch",
              "time.proj", "head.out_proj", "head.clean_proj", "head.cond_proj"}) {
            EXPECT_EQ(abs_sum(grad_of(t, b, name)), 0.0) << name;
        }
    }

    // Image-family losses never touch the vocabulary head; the noise tower
    // trains (positive control).
    {
        const BlockLayout lay = build_block_layout(cfg.grid_h, cfg.grid_w, cfg.ar_length);
        const SequencePlan plan = plan_sequence(lay, 2, true);
        const AttentionMask mask = build_mask(plan, cfg.mask_mode);
        const ForwardBatch batch = make_batch(plan, cfg, 15);
        const GroundTruth truth = make_truth(plan, cfg, batch, 15);
        LossWeights w;
        w.text = 0.0;
        w.image = 1.0;
        w.hidden = 0.1;
        w.tower = 0.5;

        Tape t;
        const BoundParams b = bind_params(t, params, true);
        const ForwardOutputs out = full_forward(t, b, cfg, plan, batch,
                                                std::make_shared<BoolMat>(full_mask_view(mask)));
        const LossNodes nodes = total_loss(t, out, plan, cfg, truth, w);
        t.backward(nodes.total);

        EXPECT_EQ(abs_sum(grad_of(t, b, "head.lm")), 0.0);
        EXPECT_GT(abs_sum(grad_of(t, b, "layers.1.noise.wq")), 0.0);
        EXPECT_GT(abs_sum(grad_of(t, b, "head.out_proj")), 0.0);
        EXPECT_GT(abs_sum(grad_of(t, b, "head.cond_proj")), 0.0);
        EXPECT_GT(abs_sum(grad_of(t, b, "head.clean_proj")), 0.0);
    }
}

#pragma once

#include <vector>

#include "ardiff/backbone.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/layout.hpp"
#include "ardiff/tape.hpp"

namespace ardiff {

struct LossWeights {
    double text = 1.0;
    double image = 5.0;
    double hidden = 0.1;
    double tower = 0.0;

    void validate() const {
        if (text < 0 || image < 0 || hidden < 0 || tower < 0)
            throw ConfigError("loss weights must be nonnegative");
    }
};

struct LossReport {
    double total = 0.0;
    double text_nll = 0.0;
    double image_mse = 0.0;
    double hidden_mse = 0.0;
    double tower_mse = 0.0;
    int text_count = 0;    // supervised text positions
    int image_rows = 0;    // noisy image tokens under the reconstruction term
    int hidden_rows = 0;   // condition rows under the hidden term
    int tower_rows = 0;    // clean rows with a next-block target
};

// Supervision index sets derived from a plan alone.
struct TermMasks {
    std::vector<int> lm_rows;        // rows carrying vocabulary logits
    std::vector<int> noisy_rows;     // rows under the image MSE
    std::vector<int> hidden_blocks;  // noisy block ids under the hidden loss
    std::vector<int> tower_blocks;   // clean block ids predicting the next block
};

inline TermMasks term_masks(const SequencePlan& plan) {
    TermMasks m;
    m.lm_rows = lm_logit_rows(plan);
    for (int id : plan.noisy_block_ids()) {
        m.hidden_blocks.push_back(id);
        for (int r : plan.block_tokens(Role::NoisyBlock, id)) m.noisy_rows.push_back(r);
    }
    // Clean block i predicts block i+1; the final block has no successor.
    const int l = static_cast<int>(plan.clean_begin.size());
    for (int id : plan.clean_block_ids()) {
        if (id + 1 < l) m.tower_blocks.push_back(id);
    }
    return m;
}

// Targets aligned with lm_logit_rows(plan): each text row predicts its
// successor (the begin-of-image token after the last text token), and the
// final image row predicts the end-of-image token. -1 marks "unsupervised".
inline std::vector<int> lm_targets(const SequencePlan& plan, const std::vector<int>& text_ids,
                                   int boi_id, int eoi_id) {
    if (static_cast<int>(text_ids.size()) != plan.text_len)
        throw ShapeMismatch("lm_targets: text_ids size");
    std::vector<int> targets;
    for (int i = 0; i < plan.text_len; ++i) {
        if (i + 1 < plan.text_len) {
            targets.push_back(text_ids[i + 1]);
        } else {
            targets.push_back(plan.has_image_span ? boi_id : -1);
        }
    }
    if (plan.text_len > 0 && plan.eoi_pos >= 0) targets.push_back(eoi_id);
    return targets;
}

struct LossNodes {
    Tape::Id total = -1;
    Tape::Id text = -1, image = -1, hidden = -1, tower = -1;
};

// Ground truth accompanying a forward pass: the text ids (targets are derived
// by shifting) and the clean latents for every block in block order.
struct GroundTruth {
    std::vector<int> text_ids;
    Mat x0;  // (ar_length * tokens_per_block, channels)
};

// Assembles the four-term objective on the tape. Each term is a mean over its
// supervised elements; terms with an empty supervision set report 0, except
// that an empty image/hidden set under a positive weight is an error.
inline LossNodes total_loss(Tape& t, const ForwardOutputs& fwd, const SequencePlan& plan,
                            const ModelConfig& cfg, const GroundTruth& truth,
                            const LossWeights& w, LossReport* report = nullptr) {
    w.validate();
    const TermMasks masks = term_masks(plan);
    const int tpb = plan.tokens_per_block;
    if (plan.has_image_span)
        require_shape(truth.x0, cfg.ar_length * tpb, cfg.channels, "ground-truth latents");

    LossNodes nodes;

    // Text negative log-likelihood.
    if (fwd.logits >= 0) {
        nodes.text = t.cross_entropy_mean(
            fwd.logits, lm_targets(plan, truth.text_ids, cfg.boi_id(), cfg.eoi_id()));
    } else {
        nodes.text = t.zeros(1, 1);
    }

    // Image reconstruction at noisy rows.
    Tape::Id x0_noisy = -1;
    if (fwd.z_hat >= 0) {
        Mat target(static_cast<int>(masks.noisy_rows.size()), cfg.channels);
        int at = 0;
        for (int id : masks.hidden_blocks) {
            for (int p = 0; p < tpb; ++p, ++at) {
                const double* src = truth.x0.row_ptr(id * tpb + p);
                std::copy(src, src + cfg.channels, target.row_ptr(at));
            }
        }
        x0_noisy = t.leaf(std::move(target));
        nodes.image = t.mse_mean(fwd.z_hat, x0_noisy);
    } else {
        // A plan with an image span but no noisy positions cannot serve an
        // enabled reconstruction term; a pure-text plan simply reports 0.
        if (w.image > 0 && plan.has_image_span)
            throw EmptySupervision("image term enabled but no noisy positions");
        nodes.image = t.zeros(1, 1);
    }

    // Hidden loss: the condition readout should already encode the target.
    if (fwd.cond_readout >= 0) {
        nodes.hidden = t.mse_mean(fwd.cond_readout, x0_noisy);
    } else {
        if (w.hidden > 0 && plan.has_image_span)
            throw EmptySupervision("hidden term enabled but no conditions produced");
        nodes.hidden = t.zeros(1, 1);
    }

    // Clean-tower next-block prediction.
    if (fwd.z_clean >= 0 && !masks.tower_blocks.empty()) {
        const std::vector<int> clean_ids = plan.clean_block_ids();
        std::vector<int> sup_rows;
        Mat target(static_cast<int>(masks.tower_blocks.size()) * tpb, cfg.channels);
        int at = 0;
        for (int id : masks.tower_blocks) {
            int pos = 0;  // offset of block id within the z_clean stack
            while (clean_ids[pos] != id) ++pos;
            for (int p = 0; p < tpb; ++p, ++at) {
                sup_rows.push_back(pos * tpb + p);
                const double* src = truth.x0.row_ptr((id + 1) * tpb + p);
                std::copy(src, src + cfg.channels, target.row_ptr(at));
            }
        }
        nodes.tower = t.mse_mean(t.select_rows(fwd.z_clean, std::move(sup_rows)),
                                 t.leaf(std::move(target)));
    } else {
        nodes.tower = t.zeros(1, 1);
    }

    nodes.total = t.weighted_sum({nodes.text, nodes.image, nodes.hidden, nodes.tower},
                                 {w.text, w.image, w.hidden, w.tower});

    if (report) {
        report->text_nll = t.val(nodes.text).v[0];
        report->image_mse = t.val(nodes.image).v[0];
        report->hidden_mse = t.val(nodes.hidden).v[0];
        report->tower_mse = t.val(nodes.tower).v[0];
        report->total = t.val(nodes.total).v[0];
        int text_count = 0;
        if (fwd.logits >= 0) {
            for (int tg : lm_targets(plan, truth.text_ids, cfg.boi_id(), cfg.eoi_id()))
                if (tg >= 0) ++text_count;
        }
        report->text_count = text_count;
        report->image_rows = static_cast<int>(masks.noisy_rows.size());
        report->hidden_rows = fwd.cond_readout >= 0 ? static_cast<int>(masks.noisy_rows.size()) : 0;
        report->tower_rows = fwd.z_clean >= 0
                                 ? static_cast<int>(masks.tower_blocks.size()) * tpb
                                 : 0;
    }
    return nodes;
}

}  // namespace ardiff

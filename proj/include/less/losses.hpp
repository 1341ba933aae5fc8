#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "less/errors.hpp"
#include "less/ops.hpp"
#include "less/rng.hpp"

// Training objective: BCE on the final mask, an area penalty on its mean
// probability, and a point-to-point contrastive term on the fused features.

namespace less {

enum class P2PForm {
    as_written,  // −mean(ratio_i)
    log_form,    // −mean(log ratio_i), InfoNCE
};

struct LossConfig {
    double lambda_seg = 1.0;
    double lambda_area = 1.0;
    double lambda_p2p = 0.05;
    double tau = 0.1;
    P2PForm p2p_form = P2PForm::log_form;
    std::size_t max_negatives = 4096;

    void validate() const {
        for (double w : {lambda_seg, lambda_area, lambda_p2p})
            if (!std::isfinite(w) || w < 0.0) throw ContractError("loss weights must be finite and non-negative");
        if (!(tau > 0.0)) throw ContractError("loss temperature must be positive");
        if (max_negatives == 0) throw ContractError("max_negatives must be positive");
    }
};

struct LossReport {
    double seg = 0.0, area = 0.0, p2p = 0.0, total = 0.0;
};

inline Tensor seg_loss(const Tensor& mask_logits, std::span<const std::uint8_t> labels) {
    if (mask_logits.numel() != labels.size())
        throw DimensionError("seg_loss: " + std::to_string(mask_logits.numel()) + " logits vs " +
                             std::to_string(labels.size()) + " labels");
    std::vector<double> y(labels.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (labels[i] > 1) throw ContractError("seg_loss: labels must be 0 or 1");
        y[i] = labels[i];
    }
    return bce_with_logits(mask_logits, y);
}

// (1/N) Σ σ(M̂_i)
inline Tensor area_loss(const Tensor& mask_logits) { return mean(sigmoid(mask_logits)); }

// Contrastive term from already selected rows. Rows are L2-normalized here;
// the positive anchor is the plain mean of the normalized positives. With no
// negatives every ratio is 1.
inline Tensor contrastive_from_rows(const Tensor& positives, const Tensor& negatives, double tau, P2PForm form) {
    Tensor p = normalize_rows(positives);
    Tensor anchor = mean_rows(p);                                        // [1 × C]
    Tensor logits = scale(matmul(p, transpose(anchor)), 1.0 / tau);      // [P × 1]
    if (negatives.defined()) {
        Tensor n = normalize_rows(negatives);
        logits = concat_cols(logits, scale(matmul(p, transpose(n)), 1.0 / tau));
    }
    Tensor first = form == P2PForm::log_form ? slice_cols(log_softmax(logits, 1), 0, 1)
                                             : slice_cols(softmax(logits, 1), 0, 1);
    return scale(mean(first), -1.0);
}

struct P2PResult {
    Tensor value;  // scalar; 0 when skipped
    bool skipped = false;
    std::vector<std::string> warnings;
};

// Indices of the negatives to use: all of them, or a uniform sample of
// max_negatives without replacement, returned in ascending order.
inline std::vector<std::size_t> sample_negatives(std::vector<std::size_t> negatives, std::size_t cap, Rng& rng) {
    if (negatives.size() <= cap) return negatives;
    for (std::size_t i = 0; i < cap; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(negatives.size() - i));
        std::swap(negatives[i], negatives[j]);
    }
    negatives.resize(cap);
    std::sort(negatives.begin(), negatives.end());
    return negatives;
}

inline P2PResult p2p_loss(const Tensor& features, std::span<const std::uint8_t> labels, const LossConfig& cfg,
                          Rng& rng) {
    if (features.rank() != 2 || features.rows() != labels.size())
        throw DimensionError("p2p_loss: features " + shape_str(features.shape()) + " for " +
                             std::to_string(labels.size()) + " labels");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
    P2PResult r;
    if (pos.empty() || neg.empty()) {
        r.skipped = true;
        r.value = Tensor::scalar(0.0);
        r.warnings.push_back(pos.empty() ? "p2p loss skipped: no positive points" : "p2p loss skipped: no negative points");
        return r;
    }
    neg = sample_negatives(std::move(neg), cfg.max_negatives, rng);
    r.value = contrastive_from_rows(gather_rows(features, pos), gather_rows(features, neg), cfg.tau, cfg.p2p_form);
    return r;
}

struct LossTerms {
    Tensor seg, area, p2p, total;
    LossReport report;
    std::vector<std::string> warnings;
};

// λ_seg·seg + λ_area·area + λ_p2p·p2p on tensors, with the same sum in the report.
inline LossTerms total_loss(Tensor seg, Tensor area, Tensor p2p, const LossConfig& cfg) {
    LossTerms t{std::move(seg), std::move(area), std::move(p2p), {}, {}, {}};
    t.report.seg = t.seg.item();
    t.report.area = t.area.item();
    t.report.p2p = t.p2p.item();
    for (auto [name, v] : {std::pair{"seg", t.report.seg}, {"area", t.report.area}, {"p2p", t.report.p2p}})
        if (!std::isfinite(v)) throw TrainingError(std::string("non-finite ") + name + " loss");
    t.total = add(add(scale(t.seg, cfg.lambda_seg), scale(t.area, cfg.lambda_area)), scale(t.p2p, cfg.lambda_p2p));
    t.report.total = t.total.item();
    return t;
}

// All three terms for one sample. With λ_p2p = 0 the contrastive term is
// still reported but evaluated off the tape.
inline LossTerms compute_losses(const Tensor& mask_logits, const Tensor& point_features,
                                std::span<const std::uint8_t> labels, const LossConfig& cfg, Rng& rng) {
    cfg.validate();
    Tensor seg = seg_loss(mask_logits, labels);
    Tensor area = area_loss(mask_logits);
    P2PResult p2p;
    if (cfg.lambda_p2p == 0.0) {
        NoGradScope off;
        p2p = p2p_loss(point_features, labels, cfg, rng);
    } else {
        p2p = p2p_loss(point_features, labels, cfg, rng);
    }
    auto terms = total_loss(seg, area, p2p.value, cfg);
    terms.warnings = std::move(p2p.warnings);
    return terms;
}

}  // namespace less

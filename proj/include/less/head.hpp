#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "less/errors.hpp"
#include "less/fusion.hpp"
#include "less/ops.hpp"
#include "less/params.hpp"

// Query-based mask decoding. K learnable queries are refined by masked
// cross-attention over the fused point feature F; each query yields a
// proposal mask M_j = Q_j · MLP(F)ᵀ, and the binary attention mask for the
// next layer keeps the points where σ(M_j) ≥ 0.5. The final mask combines the
// last proposals by their softmax similarity to the sentence feature.

namespace less {

enum class MaskSelection {
    weighted_sum,  // M̂ = softmax(Q·S) · M
    top1,          // row of M with the highest similarity, lowest index on ties
    mlp,           // learned K → 1 projection of M, no sentence alignment
};

struct HeadConfig {
    std::size_t queries = 20;
    std::size_t layers = 1;
    std::size_t width = 64;
    MaskSelection selection = MaskSelection::weighted_sum;
    bool zero_query_init = false;

    void validate() const {
        if (queries < 1) throw ContractError("head: need at least one query");
        if (layers < 1) throw ContractError("head: need at least one decoder layer");
    }
};

struct QueryState {
    Tensor queries;                            // Q_j, [K × C]
    Tensor mask_logits;                        // M_j, [K × N]
    std::vector<std::uint8_t> attention_mask;  // A_j, K × N row-major
};

struct Prediction {
    Tensor weights;                  // R, [K]
    Tensor mask_logits;              // M̂, [N]
    std::vector<std::uint8_t> mask;  // Ŷ
};

// σ(x) ≥ 0.5 evaluated as x ≥ 0.
inline std::vector<std::uint8_t> threshold_logits(const Tensor& logits) {
    std::vector<std::uint8_t> m(logits.numel());
    auto xs = logits.data();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = xs[i] >= 0.0 ? 1 : 0;
    return m;
}

// M = Q · Fmᵀ where Fm is the shared-MLP output; returns (M, A).
inline std::pair<Tensor, std::vector<std::uint8_t>> mask_predict(const Tensor& queries, const Tensor& mlp_features) {
    if (queries.rank() != 2 || mlp_features.rank() != 2 || queries.cols() != mlp_features.cols())
        throw DimensionError("mask_predict: queries " + shape_str(queries.shape()) + " vs features " +
                             shape_str(mlp_features.shape()));
    Tensor m = matmul(queries, transpose(mlp_features));
    auto a = threshold_logits(m);
    return {m, std::move(a)};
}

// Attention output before any residual: softmax over the visible points of
// (Q·Wq)(F·Wk)ᵀ/√C, applied to F·Wv.
inline Tensor masked_cross_attention(const Tensor& queries, const Tensor& features,
                                     const std::vector<std::uint8_t>& mask, const AttentionProjections& proj) {
    if (queries.cols() != features.cols())
        throw DimensionError("masked_cross_attention: queries " + shape_str(queries.shape()) + " vs features " +
                             shape_str(features.shape()));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
    Tensor logits = scale(matmul(proj.query(queries), transpose(proj.key(features))), inv_sqrt);
    return matmul(masked_softmax_rows(logits, mask), proj.value(features));
}

class QueryDecoderLayer {
public:
    QueryDecoderLayer() = default;
    QueryDecoderLayer(ParameterStore& ps, const std::string& name, std::size_t c) {
        attn_.query = Linear(ps, name + ".attn.q", c, c);
        attn_.key = Linear(ps, name + ".attn.k", c, c);
        attn_.value = Linear(ps, name + ".attn.v", c, c);
        out_ = Linear(ps, name + ".attn.out", c, c);
        ffn1_ = Linear(ps, name + ".ffn.fc1", c, c);
        ffn2_ = Linear(ps, name + ".ffn.fc2", c, c);
    }

    const AttentionProjections& attention() const { return attn_; }

    // Q' = Q + out(attn); Q'' = Q' + FFN(Q')
    Tensor forward(const Tensor& queries, const Tensor& features, const std::vector<std::uint8_t>& mask) const {
        Tensor q1 = add(queries, out_(masked_cross_attention(queries, features, mask, attn_)));
        return add(q1, ffn2_(relu(ffn1_(q1))));
    }

private:
    AttentionProjections attn_;
    Linear out_, ffn1_, ffn2_;
};

// Ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
    return best;
}

// Query-sentence alignment. `projection` is only read for MaskSelection::mlp.
inline Prediction qsa(const Tensor& queries, const Tensor& sentence, const Tensor& proposals, MaskSelection selection,
                      const Linear* projection = nullptr) {
    if (queries.rank() != 2 || sentence.numel() != queries.cols() || proposals.rank() != 2 ||
        proposals.rows() != queries.rows())
        throw DimensionError("qsa: queries " + shape_str(queries.shape()) + ", sentence " +
                             shape_str(sentence.shape()) + ", proposals " + shape_str(proposals.shape()));
    const std::size_t k = queries.rows(), n = proposals.cols();
    Prediction p;
    p.weights = softmax(reshape(matmul(queries, reshape(sentence, {sentence.numel(), 1})), {k}), 0);
    switch (selection) {
        case MaskSelection::weighted_sum:
            p.mask_logits = reshape(matmul(reshape(p.weights, {1, k}), proposals), {n});
            break;
        case MaskSelection::top1: {
            const std::vector<std::size_t> row{argmax(p.weights.data())};
            p.mask_logits = reshape(gather_rows(proposals, row), {n});
            break;
        }
        case MaskSelection::mlp:
            if (!projection) throw ContractError("qsa: mlp selection needs a projection layer");
            p.mask_logits = reshape((*projection)(transpose(proposals)), {n});
            break;
    }
    p.mask = threshold_logits(p.mask_logits);
    return p;
}

struct HeadOutput {
    std::vector<QueryState> states;  // j = 0..m
    Prediction prediction;
};

class QueryMaskPredictor {
public:
    QueryMaskPredictor() = default;
    QueryMaskPredictor(ParameterStore& ps, const std::string& name, HeadConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t c = cfg_.width;
        if (cfg_.zero_query_init)
            query_init_ = ps.zeros(name + ".query_init", {cfg_.queries, c});
        else
            query_init_ = ps.normal(name + ".query_init", {cfg_.queries, c}, 1.0 / std::sqrt(static_cast<double>(c)));
        mlp1_ = Linear(ps, name + ".mask_mlp.fc1", c, c);
        mlp2_ = Linear(ps, name + ".mask_mlp.fc2", c, c);
        for (std::size_t j = 0; j < cfg_.layers; ++j)
            layers_.emplace_back(ps, name + ".layer" + std::to_string(j + 1), c);
        if (cfg_.selection == MaskSelection::mlp) select_ = Linear(ps, name + ".select", cfg_.queries, 1);
    }

    const HeadConfig& config() const { return cfg_; }
    const Tensor& query_init() const { return query_init_; }
    const QueryDecoderLayer& layer(std::size_t j) const { return layers_.at(j); }

    // Shared across every layer.
    Tensor shared_mlp(const Tensor& features) const { return mlp2_(relu(mlp1_(features))); }

    QueryState init_state(const Tensor& mlp_features) const {
        auto [m, a] = mask_predict(query_init_, mlp_features);
        return {query_init_, m, std::move(a)};
    }

    QueryState layer_step(std::size_t j, const QueryState& prev, const Tensor& features,
                          const Tensor& mlp_features) const {
        Tensor q = layers_.at(j).forward(prev.queries, features, prev.attention_mask);
        auto [m, a] = mask_predict(q, mlp_features);
        return {q, m, std::move(a)};
    }

    HeadOutput forward(const Tensor& features, const Tensor& sentence) const {
        if (features.rank() != 2 || features.cols() != cfg_.width)
            throw DimensionError("head: features " + shape_str(features.shape()) + " for width " +
                                 std::to_string(cfg_.width));
        HeadOutput out;
        const Tensor fm = shared_mlp(features);
        out.states.push_back(init_state(fm));
        for (std::size_t j = 0; j < cfg_.layers; ++j) out.states.push_back(layer_step(j, out.states.back(), features, fm));
        const auto& last = out.states.back();
        out.prediction = qsa(last.queries, sentence, last.mask_logits, cfg_.selection, &select_);
        return out;
    }

private:
    HeadConfig cfg_;
    Tensor query_init_;
    Linear mlp1_, mlp2_;
    std::vector<QueryDecoderLayer> layers_;
    Linear select_;
};

}  // namespace less

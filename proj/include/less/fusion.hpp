#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "less/errors.hpp"
#include "less/ops.hpp"
#include "less/params.hpp"

// Point-word alignment inside the sparse encoder: every encoder stage output
// attends over the (projected) word features, and the attended signal enters
// through a tanh-bounded gate on a residual path.

namespace less {

enum class FusionMode { pwca, baseline_add };

struct AttentionProjections {
    Linear query, key, value;
};

// Single-head scaled dot-product attention, queries from `q`, keys and values
// from `kv`: softmax((q·Wq)(kv·Wk)ᵀ / √C)·(kv·Wv).
inline Tensor cross_attention(const Tensor& q, const Tensor& kv, const AttentionProjections& proj) {
    if (q.rank() != 2 || kv.rank() != 2 || q.cols() != kv.cols())
        throw DimensionError("cross_attention: query " + shape_str(q.shape()) + " and key/value " +
                             shape_str(kv.shape()) + " widths differ");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor qp = proj.query(q);
    Tensor kp = proj.key(kv);
    Tensor vp = proj.value(kv);
    Tensor logits = scale(matmul(qp, transpose(kp)), inv_sqrt);
    return matmul(softmax(logits, 1), vp);
}

// Adds the mean projected word feature to every voxel row.
inline Tensor baseline_fuse(const Tensor& v, const Tensor& projected_words) {
    if (v.rank() != 2 || projected_words.rank() != 2 || v.cols() != projected_words.cols())
        throw DimensionError("baseline_fuse: voxel features " + shape_str(v.shape()) + " vs words " +
                             shape_str(projected_words.shape()));
    const std::vector<std::size_t> every_row(v.rows(), 0);
    return add(v, gather_rows(mean_rows(projected_words), every_row));
}

// One encoder stage's alignment block:
//   V' = tanh(MLP(CrossAttn(V, W·P))) + V
// with MLP = affine → ReLU → affine. The residual sits outside the tanh, so
// |V' − V| ≤ 1 per element and a zero gate output leaves V untouched.
class PwcaStage {
public:
    PwcaStage() = default;
    PwcaStage(ParameterStore& ps, const std::string& name, std::size_t word_width, std::size_t stage_width,
              FusionMode mode)
        : mode_(mode), width_(stage_width) {
        word_projection_ = ps.uniform(name + ".word_proj", {word_width, stage_width},
                                      1.0 / std::sqrt(static_cast<double>(word_width)));
        if (mode_ == FusionMode::baseline_add) return;
        attn_.query = Linear(ps, name + ".attn.q", stage_width, stage_width);
        attn_.key = Linear(ps, name + ".attn.k", stage_width, stage_width);
        attn_.value = Linear(ps, name + ".attn.v", stage_width, stage_width);
        gate1_ = Linear(ps, name + ".gate.fc1", stage_width, stage_width);
        gate2_ = Linear(ps, name + ".gate.fc2", stage_width, stage_width);
    }

    FusionMode mode() const { return mode_; }
    std::size_t width() const { return width_; }

    Tensor project(const Tensor& words) const {
        if (words.rank() != 2 || words.cols() != word_projection_.dim(0))
            throw DimensionError("pwca: word features " + shape_str(words.shape()) + " do not match projection " +
                                 shape_str(word_projection_.shape()));
        return matmul(words, word_projection_);
    }

    // The gated branch before the residual add.
    Tensor gate_branch(const Tensor& v, const Tensor& words) const {
        Tensor attended = cross_attention(v, project(words), attn_);
        return tanh(gate2_(relu(gate1_(attended))));
    }

    Tensor apply(const Tensor& v, const Tensor& words) const {
        if (v.rank() != 2 || v.cols() != width_)
            throw DimensionError("pwca: stage features " + shape_str(v.shape()) + " for stage width " +
                                 std::to_string(width_));
        if (mode_ == FusionMode::baseline_add) return baseline_fuse(v, project(words));
        return add(gate_branch(v, words), v);
    }

    const AttentionProjections& attention() const { return attn_; }
    const Linear& gate_output() const { return gate2_; }

private:
    FusionMode mode_ = FusionMode::pwca;
    std::size_t width_ = 0;
    Tensor word_projection_;
    AttentionProjections attn_;
    Linear gate1_, gate2_;
};

// One PwcaStage per encoder stage.
class PointWordFusion {
public:
    PointWordFusion() = default;
    PointWordFusion(ParameterStore& ps, const std::string& name, std::size_t word_width,
                    const std::vector<std::size_t>& stage_widths, FusionMode mode) {
        for (std::size_t s = 0; s < stage_widths.size(); ++s)
            stages_.emplace_back(ps, name + ".stage" + std::to_string(s + 1), word_width, stage_widths[s], mode);
    }

    std::size_t size() const { return stages_.size(); }
    const PwcaStage& stage(std::size_t i) const { return stages_.at(i); }

    Tensor fuse(std::size_t stage, const Tensor& v, const Tensor& words) const { return stages_.at(stage).apply(v, words); }

private:
    std::vector<PwcaStage> stages_;
};

}  // namespace less

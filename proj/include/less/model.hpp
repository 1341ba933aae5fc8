#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "less/errors.hpp"
#include "less/fusion.hpp"
#include "less/head.hpp"
#include "less/params.hpp"
#include "less/pointcloud.hpp"
#include "less/sparse3d.hpp"
#include "less/textenc.hpp"

// The single-stage pipeline: voxelize → text encoder → sparse U-Net with
// point-word fusion after every encoder stage → devoxelize → query mask
// predictor → query-sentence alignment.

namespace less {

struct ModelConfig {
    double voxel_size = 0.05;
    std::vector<std::size_t> unet_channels{16, 32, 48, 64, 80};
    double init_neighbors = 9.0;
    std::size_t width = 64;  // C: word, sentence, fused point and query width
    std::size_t vocab_size = 0;
    std::size_t max_len = 32;
    FusionMode fusion = FusionMode::pwca;
    HeadConfig head;

    void validate() const {
        if (!(voxel_size > 0.0)) throw ContractError("model: voxel size must be positive");
        if (unet_channels.empty()) throw ContractError("model: no U-Net stages");
        if (width < 1) throw ContractError("model: width must be positive");
        head.validate();
    }
};

struct ForwardResult {
    Prediction prediction;
    Tensor features;  // F, devoxelized fused features [N × C]
    HeadOutput head;
    TextFeatures text;
    std::size_t voxels = 0;
};

inline void require_finite(const Tensor& t, const char* module) {
    for (double v : t.data())
        if (!std::isfinite(v)) throw ModelError(std::string("non-finite output from ") + module);
}

class LessModel {
public:
    explicit LessModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)), ps_(seed) {
        cfg_.validate();
        cfg_.head.width = cfg_.width;
        text_ = TextEncoder(ps_, "text", {cfg_.vocab_size, cfg_.width, cfg_.max_len});
        unet_ = SparseUNet(ps_, "unet", {6, cfg_.unet_channels, cfg_.width, cfg_.init_neighbors});
        fusion_ = PointWordFusion(ps_, "fusion", cfg_.width, cfg_.unet_channels, cfg_.fusion);
        head_ = QueryMaskPredictor(ps_, "head", cfg_.head);
    }

    LessModel(const LessModel&) = delete;
    LessModel& operator=(const LessModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& parameters() { return ps_; }
    const ParameterStore& parameters() const { return ps_; }
    const PointWordFusion& fusion() const { return fusion_; }
    const QueryMaskPredictor& head() const { return head_; }

    // `fuse_override` replaces the per-stage fusion (used to compare against
    // an identity fuse).
    ForwardResult forward(const PointCloud& cloud, const std::vector<std::size_t>& tokens,
                          const StageFuse& fuse_override = {}) const {
        ForwardResult r;
        r.text = text_.encode(tokens);
        require_finite(r.text.words, "text encoder");

        auto [voxels, map] = voxelize(cloud, cfg_.voxel_size);
        r.voxels = voxels.size();
        const Tensor words = r.text.words;
        StageFuse fuse = fuse_override ? fuse_override : StageFuse([&](std::size_t s, const Tensor& v) {
            Tensor out = fusion_.fuse(s, v, words);
            require_finite(out, "fusion");
            return out;
        });
        auto unet = unet_.forward(voxels, fuse);
        require_finite(unet.features, "sparse U-Net");

        r.features = devoxelize(unet.features, map);
        r.head = head_.forward(r.features, r.text.sentence);
        require_finite(r.head.prediction.mask_logits, "mask head");
        r.prediction = r.head.prediction;
        return r;
    }

private:
    ModelConfig cfg_;
    ParameterStore ps_;
    TextEncoder text_;
    SparseUNet unet_;
    PointWordFusion fusion_;
    QueryMaskPredictor head_;
};

}  // namespace less

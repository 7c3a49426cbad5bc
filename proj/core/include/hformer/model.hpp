#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hformer/blocks.hpp"
#include "hformer/params.hpp"

namespace hformer {

// Architecture description. Everything the parameter layout depends on lives
// here, so two models built from equal configs (and seeds) are bit-identical.
struct NetConfig {
    std::vector<int64_t> stage_widths{16, 32, 64, 128};
    std::vector<int64_t> blocks_per_stage{1, 1, 2, 2};
    int heads = 2;
    int64_t bins = 16;     // bin-count attention path
    int64_t bin_freq = 16; // bin-frequency attention path
    int64_t r = 2;         // feed-forward expansion
    int64_t image_size = 64;
    uint64_t seed = 7;
    // Ablation toggles: the task side path (intra-patch blocks, task-query
    // generator, feature-interaction fusion) and the histogram attention
    // blocks (replaced by plain convolutional blocks when off).
    bool use_task_path = true;
    bool use_histogram = true;

    bool operator==(const NetConfig&) const = default;

    // Throws ConfigError naming the violated constraint.
    void validate() const;

    std::string to_json() const;
    static NetConfig from_json(const std::string& text);
};

// Four-level encoder/decoder with histogram transformer blocks, the task
// side path feeding cross-scale fusion and decoder guidance, adaptive-mixup
// skip connections, and a global input residual.
class Model {
public:
    explicit Model(NetConfig cfg);

    const NetConfig& config() const { return cfg_; }
    ParameterStore& params() { return ps_; }
    const ParameterStore& params() const { return ps_; }

    // training=true leaves the output unclamped for the loss; inference
    // clamps to [0,1].
    Tensor forward(const Tensor& degraded, bool training) const;
    Tensor restore(const Tensor& degraded) const { return forward(degraded, false); }

private:
    Tensor run_stage(int stage, const Tensor& x) const;
    Tensor run_level(int level, const Tensor& x) const;

    NetConfig cfg_;
    ParameterStore ps_;

    std::optional<DepthwiseConv> embed_dw_;
    std::optional<PointwiseConv> embed_pw_;
    // Encoder stages 0..3 (finest to coarsest); exactly one of htbs/convs is
    // populated per the use_histogram toggle.
    std::vector<std::vector<HtbBlock>> enc_htbs_;
    std::vector<std::vector<ConvBlock>> enc_convs_;
    std::vector<TipbBlock> tipbs_;   // stages 0..2
    std::vector<Downsample> downs_;  // stages 0..2
    std::vector<SpfiBlock> spfis_;   // fuse T_s into stage s+1
    std::optional<TaskQueryBuilder> taskq_;
    // Decoder levels stored coarsest-first: index 0 = level 2 (quarter
    // resolution), 1 = level 1, 2 = level 0 (full resolution).
    std::vector<Upsample> ups_;
    std::vector<AdaptiveMixup> mixups_;
    std::vector<TsgBlock> tsgs_; // levels 2 and 1 only
    std::vector<std::vector<HtbBlock>> dec_htbs_;
    std::vector<std::vector<ConvBlock>> dec_convs_;
    std::optional<DepthwiseConv> final_dw_;
    std::optional<PointwiseConv> final_pw_;
};

} // namespace hformer

#include "hformer/model.hpp"

#include <nlohmann/json.hpp>

#include "hformer/errors.hpp"
#include "ops_util.hpp"

namespace hformer {

// ---------------------------------------------------------------------------
// NetConfig
// ---------------------------------------------------------------------------

void NetConfig::validate() const {
    if (stage_widths.size() != 4) {
        throw ConfigError("NetConfig: expected 4 stage widths, got " +
                          std::to_string(stage_widths.size()));
    }
    if (blocks_per_stage.size() != 4) {
        throw ConfigError("NetConfig: expected 4 block counts, got " +
                          std::to_string(blocks_per_stage.size()));
    }
    for (int i = 0; i < 3; ++i) {
        if (stage_widths[static_cast<size_t>(i + 1)] != 2 * stage_widths[static_cast<size_t>(i)]) {
            throw ConfigError("NetConfig: stage widths must double stage to stage, got " +
                              std::to_string(stage_widths[static_cast<size_t>(i)]) + " -> " +
                              std::to_string(stage_widths[static_cast<size_t>(i + 1)]));
        }
    }
    if (heads < 1) throw ConfigError("NetConfig: heads must be positive");
    if (bins < 1 || bin_freq < 1) throw ConfigError("NetConfig: bin settings must be positive");
    if (r < 1) throw ConfigError("NetConfig: expansion r must be positive");
    for (int64_t w : stage_widths) {
        if (w < 2 || w % 2 != 0) {
            throw ConfigError("NetConfig: stage width " + std::to_string(w) +
                              " must be even (channel split)");
        }
        if (w % heads != 0) {
            throw ConfigError("NetConfig: stage width " + std::to_string(w) +
                              " not divisible by " + std::to_string(heads) + " heads");
        }
        if ((r * w) % 2 != 0) {
            throw ConfigError("NetConfig: expanded width r*C must be even at width " +
                              std::to_string(w));
        }
    }
    for (int64_t b : blocks_per_stage) {
        if (b < 1) throw ConfigError("NetConfig: blocks per stage must be positive");
    }
    if (image_size < 8 || image_size % 8 != 0) {
        throw ConfigError("NetConfig: image size must be a positive multiple of 8, got " +
                          std::to_string(image_size));
    }
    if (!detail::is_pow2(image_size)) {
        throw ConfigError("NetConfig: image size must be a power of two (radix-2 transform), "
                          "got " + std::to_string(image_size));
    }
}

std::string NetConfig::to_json() const {
    nlohmann::json j;
    j["stage_widths"] = stage_widths;
    j["blocks_per_stage"] = blocks_per_stage;
    j["heads"] = heads;
    j["bins"] = bins;
    j["bin_freq"] = bin_freq;
    j["r"] = r;
    j["image_size"] = image_size;
    j["seed"] = seed;
    j["use_task_path"] = use_task_path;
    j["use_histogram"] = use_histogram;
    return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("NetConfig: invalid JSON: ") + e.what());
    }
    NetConfig cfg;
    try {
        if (j.contains("stage_widths")) cfg.stage_widths = j["stage_widths"].get<std::vector<int64_t>>();
        if (j.contains("blocks_per_stage")) cfg.blocks_per_stage = j["blocks_per_stage"].get<std::vector<int64_t>>();
        if (j.contains("heads")) cfg.heads = j["heads"].get<int>();
        if (j.contains("bins")) cfg.bins = j["bins"].get<int64_t>();
        if (j.contains("bin_freq")) cfg.bin_freq = j["bin_freq"].get<int64_t>();
        if (j.contains("r")) cfg.r = j["r"].get<int64_t>();
        if (j.contains("image_size")) cfg.image_size = j["image_size"].get<int64_t>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
        if (j.contains("use_task_path")) cfg.use_task_path = j["use_task_path"].get<bool>();
        if (j.contains("use_histogram")) cfg.use_histogram = j["use_histogram"].get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("NetConfig: bad field type: ") + e.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Model assembly
// ---------------------------------------------------------------------------

Model::Model(NetConfig cfg) : cfg_(std::move(cfg)), ps_(cfg_.seed) {
    cfg_.validate();
    const auto& w = cfg_.stage_widths;
    const HistConfig hist{cfg_.bins, cfg_.bin_freq};
    const int64_t s0 = cfg_.image_size;

    embed_dw_.emplace(ps_, "embed.dw", 3, 3);
    embed_pw_.emplace(ps_, "embed.pw", 3, w[0]);

    enc_htbs_.resize(4);
    enc_convs_.resize(4);
    for (int s = 0; s < 4; ++s) {
        const int64_t c = w[static_cast<size_t>(s)];
        const int64_t n = cfg_.blocks_per_stage[static_cast<size_t>(s)];
        for (int64_t j = 0; j < n; ++j) {
            const std::string prefix = "enc" + std::to_string(s) + ".htb" + std::to_string(j);
            if (cfg_.use_histogram) {
                enc_htbs_[static_cast<size_t>(s)].emplace_back(ps_, prefix, c, cfg_.heads, hist,
                                                               cfg_.r);
            } else {
                enc_convs_[static_cast<size_t>(s)].emplace_back(ps_, prefix, c, cfg_.r);
            }
        }
        if (s < 3) {
            const int64_t side = s0 >> s;
            if (cfg_.use_task_path) {
                tipbs_.emplace_back(ps_, "tipb" + std::to_string(s), c, side, side, cfg_.heads);
            }
            downs_.emplace_back(ps_, "down" + std::to_string(s), c);
            if (cfg_.use_task_path) {
                spfis_.emplace_back(ps_, "spfi" + std::to_string(s), c,
                                    w[static_cast<size_t>(s + 1)]);
            }
        }
    }

    if (cfg_.use_task_path) taskq_.emplace(ps_, "taskq", w[0], w[1], w[2]);

    dec_htbs_.resize(3);
    dec_convs_.resize(3);
    for (int i = 0; i < 3; ++i) {
        const int level = 2 - i; // coarsest decoder level first
        const int64_t c = w[static_cast<size_t>(level)];
        ups_.emplace_back(ps_, "up" + std::to_string(level), 2 * c);
        mixups_.emplace_back(ps_, "mixup" + std::to_string(level));
        if (cfg_.use_task_path && level >= 1) {
            tsgs_.emplace_back(ps_, "tsg" + std::to_string(level), w[2], c, cfg_.heads);
        }
        const int64_t n = cfg_.blocks_per_stage[static_cast<size_t>(level)];
        for (int64_t j = 0; j < n; ++j) {
            const std::string prefix = "dec" + std::to_string(level) + ".htb" + std::to_string(j);
            if (cfg_.use_histogram) {
                dec_htbs_[static_cast<size_t>(i)].emplace_back(ps_, prefix, c, cfg_.heads, hist,
                                                               cfg_.r);
            } else {
                dec_convs_[static_cast<size_t>(i)].emplace_back(ps_, prefix, c, cfg_.r);
            }
        }
    }

    final_dw_.emplace(ps_, "final.dw", w[0], 3);
    final_pw_.emplace(ps_, "final.pw", w[0], 3);
}

Tensor Model::run_stage(int stage, const Tensor& x) const {
    Tensor y = x;
    if (cfg_.use_histogram) {
        for (const HtbBlock& b : enc_htbs_[static_cast<size_t>(stage)]) y = b.forward(y);
    } else {
        for (const ConvBlock& b : enc_convs_[static_cast<size_t>(stage)]) y = b.forward(y);
    }
    return y;
}

Tensor Model::run_level(int level, const Tensor& x) const {
    const size_t idx = static_cast<size_t>(2 - level);
    Tensor y = x;
    if (cfg_.use_histogram) {
        for (const HtbBlock& b : dec_htbs_[idx]) y = b.forward(y);
    } else {
        for (const ConvBlock& b : dec_convs_[idx]) y = b.forward(y);
    }
    return y;
}

Tensor Model::forward(const Tensor& degraded, bool training) const {
    if (degraded.rank() != 3 || degraded.dim(0) != 3 || degraded.dim(1) != cfg_.image_size ||
        degraded.dim(2) != cfg_.image_size) {
        throw ShapeError("Model: expected [3," + std::to_string(cfg_.image_size) + "," +
                         std::to_string(cfg_.image_size) + "] input, got " +
                         shape_str(degraded.shape()));
    }

    // Encoder with the task side path.
    std::vector<Tensor> enc(4);
    std::vector<Tensor> task(3);
    Tensor x = embed_pw_->forward(embed_dw_->forward(degraded));
    enc[0] = run_stage(0, x);
    for (int s = 0; s < 3; ++s) {
        if (cfg_.use_task_path) task[static_cast<size_t>(s)] = tipbs_[static_cast<size_t>(s)].forward(enc[static_cast<size_t>(s)]);
        Tensor d = downs_[static_cast<size_t>(s)].forward(enc[static_cast<size_t>(s)]);
        if (cfg_.use_task_path) {
            d = spfis_[static_cast<size_t>(s)].forward(d, task[static_cast<size_t>(s)]);
        }
        enc[static_cast<size_t>(s + 1)] = run_stage(s + 1, d);
    }

    Tensor qtask;
    if (cfg_.use_task_path) qtask = taskq_->forward(task[0], task[1], task[2]);

    // Decoder, coarsest level first.
    Tensor y = enc[3];
    for (int i = 0; i < 3; ++i) {
        const int level = 2 - i;
        const Tensor up = ups_[static_cast<size_t>(i)].forward(y);
        Tensor m = mixups_[static_cast<size_t>(i)].forward(enc[static_cast<size_t>(level)], up);
        if (cfg_.use_task_path && level >= 1) {
            m = tsgs_[static_cast<size_t>(i)].forward(m, qtask);
        }
        y = run_level(level, m);
    }

    Tensor out = final_pw_->forward(final_dw_->forward(y)) + degraded;
    if (!training) out = clamp01(out);
    return out;
}

} // namespace hformer

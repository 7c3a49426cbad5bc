#include "hformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>

#include "hformer/checkpoint.hpp"
#include "hformer/errors.hpp"
#include "hformer/metrics.hpp"
#include "hformer/ops.hpp"
#include "hformer/rng.hpp"

namespace hformer {

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["net"] = nlohmann::json::parse(net.to_json());
    j["lr"] = lr;
    j["epochs"] = epochs;
    j["batch"] = batch;
    j["seed"] = seed;
    j["perceptual_weight"] = weights.perceptual;
    j["frequency_weight"] = weights.frequency;
    j["perceptual_seed"] = perceptual_seed;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("TrainConfig: invalid JSON: ") + e.what());
    }
    TrainConfig cfg;
    try {
        if (j.contains("net")) cfg.net = NetConfig::from_json(j["net"].dump());
        if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
        if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int64_t>();
        if (j.contains("batch")) cfg.batch = j["batch"].get<int64_t>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
        if (j.contains("perceptual_weight")) cfg.weights.perceptual = j["perceptual_weight"].get<double>();
        if (j.contains("frequency_weight")) cfg.weights.frequency = j["frequency_weight"].get<double>();
        if (j.contains("perceptual_seed")) cfg.perceptual_seed = j["perceptual_seed"].get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("TrainConfig: bad field type: ") + e.what());
    }
    return cfg;
}

double lr_for_epoch(const TrainConfig& cfg, int64_t epoch) {
    const int64_t m1 = 2 * cfg.epochs / 3;
    const int64_t m2 = 5 * cfg.epochs / 6;
    double rate = cfg.lr;
    if (epoch >= m1) rate *= 0.5;
    if (epoch >= m2) rate *= 0.5;
    return rate;
}

std::string EpochStats::log_line() const {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "epoch=%lld lr=%.8f total=%.8f l1=%.8f perc=%.8f freq=%.8f",
                  static_cast<long long>(epoch), lr, total, l1, perceptual, frequency);
    return buf;
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), extractor_(cfg.perceptual_seed) {
    if (cfg_.batch < 1) throw ConfigError("TrainConfig: batch must be >= 1");
    if (cfg_.epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (!(cfg_.lr > 0.0)) throw ConfigError("TrainConfig: lr must be positive");
    cfg_.net.validate();
    model_ = std::make_unique<Model>(cfg_.net);
    opt_ = std::make_unique<Adam>(model_->params(), cfg_.lr);
}

uint64_t Trainer::resume(const std::string& checkpoint_path) {
    const TrainConfig stored = TrainConfig::from_json(peek_checkpoint_config(checkpoint_path));
    if (!(stored == cfg_)) {
        throw ConfigError("resume: checkpoint config does not match the requested run");
    }
    return load_checkpoint(checkpoint_path, model_->params(), opt_.get());
}

EpochStats Trainer::run_epoch(const std::vector<ImagePair>& data, int64_t epoch) {
    if (data.empty()) throw DataError("run_epoch: empty dataset");
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_for_epoch(cfg_, epoch);
    opt_->set_lr(stats.lr);

    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg_.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(epoch + 1)));
    for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(
                                    static_cast<int64_t>(i)))]);
    }

    const size_t n = data.size();
    for (size_t begin = 0; begin < n; begin += static_cast<size_t>(cfg_.batch)) {
        const size_t end = std::min(n, begin + static_cast<size_t>(cfg_.batch));
        const double inv_batch = 1.0 / static_cast<double>(end - begin);
        model_->params().zero_grad();
        for (size_t k = begin; k < end; ++k) {
            const ImagePair& pair = data[order[k]];
            Tape tape;
            LossTerms terms;
            Tensor batch_loss;
            {
                Tape::Scope scope(tape);
                const Tensor pred = model_->forward(pair.degraded, /*training=*/true);
                terms = total_loss(extractor_, pred, pair.clean, cfg_.weights);
                batch_loss = scale(terms.total, inv_batch);
            }
            auto check = [&](double v, const char* name) {
                if (!std::isfinite(v)) {
                    throw NumericError("training aborted: " + std::string(name) +
                                       " loss is non-finite at epoch " + std::to_string(epoch) +
                                       ", sample " + std::to_string(order[k]));
                }
            };
            check(terms.l1, "smooth-l1");
            check(terms.perceptual, "perceptual");
            check(terms.frequency, "frequency");
            tape.backward(batch_loss);
            stats.total += terms.total.value();
            stats.l1 += terms.l1;
            stats.perceptual += terms.perceptual;
            stats.frequency += terms.frequency;
        }
        opt_->step();
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    stats.total *= inv_n;
    stats.l1 *= inv_n;
    stats.perceptual *= inv_n;
    stats.frequency *= inv_n;
    return stats;
}

std::vector<EpochStats> Trainer::fit(const std::vector<ImagePair>& data, uint64_t start_epoch,
                                     const std::string& checkpoint_dir, std::ostream* log) {
    std::vector<EpochStats> history;
    if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);
    for (int64_t epoch = static_cast<int64_t>(start_epoch); epoch < cfg_.epochs; ++epoch) {
        EpochStats stats = run_epoch(data, epoch);
        if (log) *log << stats.log_line() << "\n" << std::flush;
        if (!checkpoint_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%04lld.hfrm", static_cast<long long>(epoch + 1));
            const auto path = std::filesystem::path(checkpoint_dir) / name;
            save_checkpoint(path.string(), cfg_.to_json(), model_->params(), opt_.get(),
                            static_cast<uint64_t>(epoch + 1));
        }
        history.push_back(stats);
    }
    return history;
}

std::vector<std::pair<std::string, double>> evaluate(const Model& model,
                                                     const std::vector<ImagePair>& data) {
    if (data.empty()) throw DataError("evaluate: no samples in dataset");
    struct Bucket {
        double psnr_restored = 0.0, psnr_degraded = 0.0;
        double ssim_restored = 0.0, ssim_degraded = 0.0;
        int64_t count = 0;
    };
    std::map<std::string, Bucket> buckets;
    Bucket overall;
    for (const ImagePair& pair : data) {
        const Tensor restored = model.restore(pair.degraded);
        const double pr = psnr(restored, pair.clean);
        const double pd = psnr(pair.degraded, pair.clean);
        const double sr = ssim(restored, pair.clean);
        const double sd = ssim(pair.degraded, pair.clean);
        Bucket& b = buckets[weather_kind_name(pair.kind)];
        for (Bucket* dst : {&b, &overall}) {
            dst->psnr_restored += pr;
            dst->psnr_degraded += pd;
            dst->ssim_restored += sr;
            dst->ssim_degraded += sd;
            dst->count += 1;
        }
    }
    std::vector<std::pair<std::string, double>> report;
    auto emit = [&report](const std::string& tag, const Bucket& b) {
        const double inv = 1.0 / static_cast<double>(b.count);
        report.emplace_back("psnr_restored_" + tag, b.psnr_restored * inv);
        report.emplace_back("psnr_degraded_" + tag, b.psnr_degraded * inv);
        report.emplace_back("ssim_restored_" + tag, b.ssim_restored * inv);
        report.emplace_back("ssim_degraded_" + tag, b.ssim_degraded * inv);
    };
    for (const auto& [tag, bucket] : buckets) emit(tag, bucket);
    emit("overall", overall);
    return report;
}

} // namespace hformer

#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "hformer/losses.hpp"
#include "hformer/model.hpp"
#include "hformer/optim.hpp"
#include "hformer/weather.hpp"

namespace hformer {

struct TrainConfig {
    NetConfig net;
    double lr = 2e-4;
    int64_t epochs = 60;
    int64_t batch = 2;
    uint64_t seed = 7; // shuffle order; net.seed governs initialization
    LossWeights weights;
    uint64_t perceptual_seed = 1234;

    bool operator==(const TrainConfig&) const = default;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

// Step decay: the base rate halves at floor(2E/3) and floor(5E/6) epochs.
double lr_for_epoch(const TrainConfig& cfg, int64_t epoch);

struct EpochStats {
    int64_t epoch = 0;
    double lr = 0.0;
    double total = 0.0;
    double l1 = 0.0;
    double perceptual = 0.0;
    double frequency = 0.0;

    // "epoch=<n> lr=<f> total=<f> l1=<f> perc=<f> freq=<f>"
    std::string log_line() const;
};

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);

    const TrainConfig& config() const { return cfg_; }
    Model& model() { return *model_; }
    const Model& model() const { return *model_; }
    Adam& optimizer() { return *opt_; }
    const PerceptualExtractor& extractor() const { return extractor_; }

    // Loads a checkpoint (including optimizer state) and returns the number
    // of completed epochs; the embedded config must equal this trainer's.
    uint64_t resume(const std::string& checkpoint_path);

    // One pass over the data at the epoch's scheduled rate. Sample order is a
    // seeded shuffle derived from (seed, epoch); gradients average over each
    // batch. A non-finite loss raises NumericError naming the first bad term.
    EpochStats run_epoch(const std::vector<ImagePair>& data, int64_t epoch);

    // Runs epochs [start, cfg.epochs); per-epoch checkpoints are written into
    // checkpoint_dir when non-empty, log lines to *log when non-null.
    std::vector<EpochStats> fit(const std::vector<ImagePair>& data, uint64_t start_epoch,
                                const std::string& checkpoint_dir, std::ostream* log);

private:
    TrainConfig cfg_;
    std::unique_ptr<Model> model_;
    std::unique_ptr<Adam> opt_;
    PerceptualExtractor extractor_;
};

// Per-kind and overall restored/degraded PSNR and SSIM, in report order.
std::vector<std::pair<std::string, double>> evaluate(const Model& model,
                                                     const std::vector<ImagePair>& data);

} // namespace hformer

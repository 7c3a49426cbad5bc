#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "hformer/checkpoint.hpp"
#include "hformer/errors.hpp"
#include "hformer/image_io.hpp"
#include "hformer/metrics.hpp"
#include "hformer/model.hpp"
#include "hformer/trainer.hpp"
#include "hformer/weather.hpp"

namespace {

using namespace hformer;

std::optional<uint64_t> env_seed_override() {
    const char* raw = std::getenv("HF_SEED");
    if (!raw || !*raw) return std::nullopt;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(raw, &end, 10);
    if (end == raw || *end != '\0') {
        throw ConfigError(std::string("HF_SEED must be an unsigned integer, got '") + raw + "'");
    }
    return static_cast<uint64_t>(v);
}

void require_pow2_size(int64_t size) {
    if (size < 8 || (size & (size - 1)) != 0) {
        throw ConfigError("size must be a power of two >= 8 (the frequency loss runs a "
                          "radix-2 FFT), got " + std::to_string(size));
    }
}

std::map<std::string, double> parse_mix(const std::string& spec) {
    std::map<std::string, double> mix;
    std::istringstream in(spec);
    std::string token;
    while (std::getline(in, token, ',')) {
        if (token.empty()) continue;
        const size_t eq = token.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("bad --mix entry '" + token + "': expected kind=weight");
        }
        const std::string kind = token.substr(0, eq);
        weather_kind_from_name(kind); // validates the name
        try {
            mix[kind] = std::stod(token.substr(eq + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad --mix weight in '" + token + "'");
        }
    }
    if (mix.empty()) throw ConfigError("--mix selects no weather kinds");
    return mix;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream body;
    body << in.rdbuf();
    return body.str();
}

struct LoadedModel {
    TrainConfig cfg;
    std::unique_ptr<Model> model;
};

LoadedModel load_model(const std::string& checkpoint) {
    LoadedModel lm;
    lm.cfg = TrainConfig::from_json(peek_checkpoint_config(checkpoint));
    lm.cfg.net.validate();
    lm.model = std::make_unique<Model>(lm.cfg.net);
    load_checkpoint(checkpoint, lm.model->params(), nullptr);
    return lm;
}

std::vector<ImagePair> load_sized_dataset(const std::string& manifest, int64_t expect_size) {
    std::vector<ImagePair> data = load_dataset(manifest);
    for (const ImagePair& pair : data) {
        if (pair.degraded.dim(1) != expect_size || pair.degraded.dim(2) != expect_size) {
            throw DataError("dataset image is " + std::to_string(pair.degraded.dim(1)) + "x" +
                            std::to_string(pair.degraded.dim(2)) + ", model expects " +
                            std::to_string(expect_size) + "x" + std::to_string(expect_size));
        }
    }
    return data;
}

int run(int argc, char** argv) {
    CLI::App app{"Multi-weather image restoration: dataset synthesis, training, "
                 "evaluation, and single-image restoration"};
    app.require_subcommand(1);

    // --- synth ---------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Synthesize a degraded/clean image dataset");
    std::string synth_out;
    int64_t synth_count = 8, synth_size = 64;
    uint64_t synth_seed = 7;
    std::string synth_mix = "haze=1,rain=1,snow=1,rain+haze=1";
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--count", synth_count, "Number of image pairs")
        ->check(CLI::PositiveNumber);
    synth->add_option("--size", synth_size, "Square image size in pixels");
    synth->add_option("--seed", synth_seed, "Dataset seed");
    synth->add_option("--mix", synth_mix, "Weather mix, e.g. haze=1,rain=2");

    // --- train ----------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train a restoration model");
    std::string train_data, train_out = "run", train_config, train_resume;
    TrainConfig tc;
    train->add_option("--data", train_data, "Dataset manifest")->required();
    train->add_option("--out", train_out, "Checkpoint directory");
    train->add_option("--config", train_config, "TrainConfig JSON file");
    train->add_option("--resume", train_resume, "Checkpoint to resume from");
    auto* opt_epochs = train->add_option("--epochs", tc.epochs, "Training epochs");
    auto* opt_batch = train->add_option("--batch", tc.batch, "Batch size");
    auto* opt_lr = train->add_option("--lr", tc.lr, "Base learning rate");
    auto* opt_seed = train->add_option("--seed", tc.seed, "Shuffle/init seed");
    auto* opt_size = train->add_option("--image-size", tc.net.image_size, "Square input size");
    auto* opt_no_task = train->add_flag("--no-task-path", "Disable the task side path");
    auto* opt_no_hist = train->add_flag("--no-histogram", "Replace histogram attention blocks "
                                                          "with plain convolutional blocks");

    // --- eval -----------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_data, eval_checkpoint;
    eval->add_option("--data", eval_data, "Dataset manifest")->required();
    eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();

    // --- restore --------------------------------------------------------
    auto* restore = app.add_subcommand("restore", "Restore a single PPM image");
    std::string restore_checkpoint, restore_in, restore_out, restore_truth;
    restore->add_option("--checkpoint", restore_checkpoint, "Checkpoint file")->required();
    restore->add_option("--in", restore_in, "Degraded input PPM")->required();
    restore->add_option("--out", restore_out, "Restored output PPM")->required();
    restore->add_option("--truth", restore_truth, "Optional clean PPM for a PSNR report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    const std::optional<uint64_t> seed_override = env_seed_override();

    if (*synth) {
        require_pow2_size(synth_size);
        if (seed_override) synth_seed = *seed_override;
        const std::vector<ImagePair> pairs =
            make_dataset(synth_count, synth_size, parse_mix(synth_mix), synth_seed);
        const std::string manifest = write_dataset(synth_out, pairs);
        std::cout << "wrote " << pairs.size() << " pairs, manifest " << manifest << "\n";
        return 0;
    }

    if (*train) {
        if (!train_config.empty()) {
            TrainConfig file_cfg = TrainConfig::from_json(read_text_file(train_config));
            // Explicit command-line flags override the file.
            if (opt_epochs->count()) file_cfg.epochs = tc.epochs;
            if (opt_batch->count()) file_cfg.batch = tc.batch;
            if (opt_lr->count()) file_cfg.lr = tc.lr;
            if (opt_seed->count()) file_cfg.seed = tc.seed;
            if (opt_size->count()) file_cfg.net.image_size = tc.net.image_size;
            tc = file_cfg;
        }
        if (opt_no_task->count()) tc.net.use_task_path = false;
        if (opt_no_hist->count()) tc.net.use_histogram = false;
        if (seed_override) {
            tc.seed = *seed_override;
            tc.net.seed = *seed_override;
        }
        require_pow2_size(tc.net.image_size);
        Trainer trainer(tc);
        const std::vector<ImagePair> data = load_sized_dataset(train_data, tc.net.image_size);
        uint64_t start_epoch = 0;
        if (!train_resume.empty()) {
            start_epoch = trainer.resume(train_resume);
            std::cout << "resumed at epoch " << start_epoch << "\n";
        }
        trainer.fit(data, start_epoch, train_out, &std::cout);
        return 0;
    }

    if (*eval) {
        const LoadedModel lm = load_model(eval_checkpoint);
        const std::vector<ImagePair> data =
            load_sized_dataset(eval_data, lm.cfg.net.image_size);
        const auto report = evaluate(*lm.model, data);
        // Human-readable table first; the evaluate() report carries four
        // entries per subset, per-kind groups before the overall block.
        char row[128];
        std::snprintf(row, sizeof(row), "%-10s %14s %14s %14s %14s", "subset", "psnr-degraded",
                      "psnr-restored", "ssim-degraded", "ssim-restored");
        std::cout << row << "\n";
        const std::string prefix = "psnr_restored_";
        for (size_t i = 0; i + 3 < report.size(); i += 4) {
            const std::string tag = report[i].first.substr(prefix.size());
            std::snprintf(row, sizeof(row), "%-10s %14.4f %14.4f %14.4f %14.4f", tag.c_str(),
                          report[i + 1].second, report[i].second, report[i + 3].second,
                          report[i + 2].second);
            std::cout << row << "\n";
        }
        std::cout << "\n";
        for (const auto& [name, value] : report) {
            std::cout << metric_line(name, value) << "\n";
        }
        return 0;
    }

    if (*restore) {
        const LoadedModel lm = load_model(restore_checkpoint);
        const Tensor input = read_ppm(restore_in);
        const int64_t s = lm.cfg.net.image_size;
        if (input.dim(1) != s || input.dim(2) != s) {
            throw DataError("input is " + std::to_string(input.dim(1)) + "x" +
                            std::to_string(input.dim(2)) + ", model expects " +
                            std::to_string(s) + "x" + std::to_string(s));
        }
        const Tensor output = lm.model->restore(input);
        write_ppm(restore_out, output);
        if (!restore_truth.empty()) {
            const Tensor truth = read_ppm(restore_truth);
            std::cout << metric_line("psnr", psnr(output, truth)) << "\n";
        }
        return 0;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const hformer::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const hformer::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const hformer::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const hformer::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const hformer::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "hformer/image_io.hpp"
#include "hformer/tensor.hpp"
#include "support/tmpdir.hpp"

using namespace hformer;
using hformer::testing::TempDir;

namespace {

struct RunResult {
    int code = -1;
    std::string out; // stdout and stderr combined
};

// Runs the installed binary through the shell with output captured to a file.
RunResult run_cli(const TempDir& tmp, const std::string& args, const std::string& env = "") {
    static int counter = 0;
    const std::string capture = tmp.str("cli_out_" + std::to_string(counter++) + ".txt");
    std::string cmd = env.empty() ? std::string() : env + " ";
    cmd += std::string(HFORMER_BIN) + " " + args + " > " + capture + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
    std::ifstream in(capture, std::ios::binary);
    r.out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

const char* kSmallConfigJson = R"({
  "net": {"stage_widths": [4, 8, 16, 32], "blocks_per_stage": [1, 1, 1, 1],
          "bins": 4, "bin_freq": 4, "image_size": 16, "seed": 11},
  "lr": 0.001, "epochs": 2, "batch": 2, "seed": 99
})";

} // namespace

TEST_CASE("cli: help and argument errors") {
    TempDir tmp("cli_help");
    const RunResult help = run_cli(tmp, "--help");
    CHECK(help.code == 0);
    CHECK(contains(help.out, "synth"));
    CHECK(contains(help.out, "train"));
    CHECK(contains(help.out, "eval"));
    CHECK(contains(help.out, "restore"));

    CHECK(run_cli(tmp, "").code == 2);                                // subcommand required
    CHECK(run_cli(tmp, "synth").code == 2);                           // --out required
    CHECK(run_cli(tmp, "synth --out x --bogus").code == 2);           // unknown flag
    CHECK(run_cli(tmp, "synth --out x --count 0").code == 2);         // positive count
}

TEST_CASE("cli: synth determinism and validation") {
    TempDir tmp("cli_synth");
    const std::string args = "--count 6 --size 16 --seed 5";
    const RunResult a = run_cli(tmp, "synth --out " + tmp.str("a") + " " + args);
    REQUIRE(a.code == 0);
    CHECK(contains(a.out, "wrote 6 pairs"));
    REQUIRE(run_cli(tmp, "synth --out " + tmp.str("b") + " " + args).code == 0);

    CHECK(slurp(tmp.str("a/manifest.txt")) == slurp(tmp.str("b/manifest.txt")));
    CHECK(slurp(tmp.str("a/pair_00000_degraded.ppm")) == slurp(tmp.str("b/pair_00000_degraded.ppm")));

    SUBCASE("seed env override wins over the flag") {
        REQUIRE(run_cli(tmp, "synth --out " + tmp.str("c") + " --count 6 --size 16 --seed 5",
                        "HF_SEED=123").code == 0);
        REQUIRE(run_cli(tmp, "synth --out " + tmp.str("d") + " --count 6 --size 16 --seed 123")
                    .code == 0);
        CHECK(slurp(tmp.str("c/manifest.txt")) == slurp(tmp.str("d/manifest.txt")));
        CHECK(slurp(tmp.str("c/pair_00003_degraded.ppm")) ==
              slurp(tmp.str("d/pair_00003_degraded.ppm")));
        CHECK(run_cli(tmp, "synth --out " + tmp.str("e"), "HF_SEED=abc").code == 2);
    }
    SUBCASE("bad requests map to usage or data errors") {
        CHECK(run_cli(tmp, "synth --out " + tmp.str("x") + " --size 12").code == 2);
        CHECK(run_cli(tmp, "synth --out " + tmp.str("x") + " --mix haze").code == 2);
        const RunResult sleet = run_cli(tmp, "synth --out " + tmp.str("x") + " --mix sleet=1");
        CHECK(sleet.code == 3);
        CHECK(contains(sleet.out, "sleet"));
    }
}

TEST_CASE("cli: train, eval, and restore round trip") {
    TempDir tmp("cli_flow");
    REQUIRE(run_cli(tmp, "synth --out " + tmp.str("data") +
                             " --count 4 --size 16 --seed 2024 --mix haze=1,rain=1")
                .code == 0);
    const std::string manifest = tmp.str("data/manifest.txt");
    {
        std::ofstream cfg(tmp.str("cfg.json"));
        cfg << kSmallConfigJson;
    }

    const RunResult train = run_cli(tmp, "train --data " + manifest + " --out " + tmp.str("run") +
                                             " --config " + tmp.str("cfg.json"));
    REQUIRE_MESSAGE(train.code == 0, train.out);
    CHECK(contains(train.out, "epoch=0 "));
    CHECK(contains(train.out, "epoch=1 "));
    const std::string ckpt = tmp.str("run/epoch_0002.hfrm");
    REQUIRE(std::filesystem::exists(tmp.str("run/epoch_0001.hfrm")));
    REQUIRE(std::filesystem::exists(ckpt));

    SUBCASE("eval prints a table and machine-readable lines") {
        const RunResult eval = run_cli(tmp, "eval --data " + manifest + " --checkpoint " + ckpt);
        REQUIRE_MESSAGE(eval.code == 0, eval.out);
        CHECK(contains(eval.out, "subset"));
        CHECK(contains(eval.out, "psnr-restored"));
        CHECK(contains(eval.out, "metric,psnr_restored_overall,"));
        CHECK(contains(eval.out, "metric,ssim_degraded_overall,"));
    }
    SUBCASE("restore writes a valid image and reports psnr against truth") {
        const RunResult restore = run_cli(
            tmp, "restore --checkpoint " + ckpt + " --in " + tmp.str("data/pair_00000_degraded.ppm") +
                     " --out " + tmp.str("restored.ppm") + " --truth " +
                     tmp.str("data/pair_00000_clean.ppm"));
        REQUIRE_MESSAGE(restore.code == 0, restore.out);
        CHECK(contains(restore.out, "metric,psnr,"));
        const Tensor img = read_ppm(tmp.str("restored.ppm"));
        CHECK(img.dim(0) == 3);
        CHECK(img.dim(1) == 16);
        CHECK(img.dim(2) == 16);
    }
    SUBCASE("resume matches the uninterrupted run byte for byte") {
        const RunResult resumed =
            run_cli(tmp, "train --data " + manifest + " --out " + tmp.str("run2") + " --config " +
                             tmp.str("cfg.json") + " --resume " + tmp.str("run/epoch_0001.hfrm"));
        REQUIRE_MESSAGE(resumed.code == 0, resumed.out);
        CHECK(contains(resumed.out, "resumed at epoch 1"));
        CHECK(contains(resumed.out, "epoch=1 "));
        CHECK(slurp(tmp.str("run2/epoch_0002.hfrm")) == slurp(ckpt));
    }
    SUBCASE("resume with an edited run config is rejected") {
        const RunResult r = run_cli(tmp, "train --data " + manifest + " --out " + tmp.str("run4") +
                                             " --config " + tmp.str("cfg.json") +
                                             " --epochs 3 --resume " + ckpt);
        CHECK(r.code == 2);
        CHECK(contains(r.out, "does not match"));
    }
    SUBCASE("ablation flags are accepted") {
        const RunResult ablated =
            run_cli(tmp, "train --data " + manifest + " --out " + tmp.str("run3") + " --config " +
                             tmp.str("cfg.json") + " --no-task-path --no-histogram");
        REQUIRE_MESSAGE(ablated.code == 0, ablated.out);
        CHECK(contains(ablated.out, "epoch=0 "));
    }
    SUBCASE("wrong-size input is a data error") {
        write_ppm(tmp.str("small.ppm"), Tensor::full({3, 8, 8}, 0.5));
        const RunResult r = run_cli(tmp, "restore --checkpoint " + ckpt + " --in " +
                                             tmp.str("small.ppm") + " --out " + tmp.str("o.ppm"));
        CHECK(r.code == 3);
        CHECK(contains(r.out, "model expects 16x16"));
    }
    SUBCASE("missing files map to data errors") {
        CHECK(run_cli(tmp, "eval --data " + manifest + " --checkpoint " + tmp.str("nope.hfrm"))
                  .code == 3);
        CHECK(run_cli(tmp, "train --data " + manifest + " --config " + tmp.str("nope.json"))
                  .code == 3);
        CHECK(run_cli(tmp, "train --data " + tmp.str("nope.txt") + " --config " +
                               tmp.str("cfg.json"))
                  .code == 3);
    }
}

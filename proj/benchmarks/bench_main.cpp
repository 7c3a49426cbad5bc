#include <benchmark/benchmark.h>

#include "hformer/blocks.hpp"
#include "hformer/losses.hpp"
#include "hformer/model.hpp"
#include "hformer/ops.hpp"
#include "hformer/params.hpp"
#include "hformer/rng.hpp"
#include "hformer/tensor.hpp"
#include "hformer/trainer.hpp"
#include "hformer/weather.hpp"

namespace {

using namespace hformer;

Tensor random_tensor(Shape shape, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

NetConfig small_net() {
    NetConfig cfg;
    cfg.stage_widths = {4, 8, 16, 32};
    cfg.blocks_per_stage = {1, 1, 1, 1};
    cfg.bins = 4;
    cfg.bin_freq = 4;
    cfg.image_size = 16;
    cfg.seed = 11;
    return cfg;
}

void bm_matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    const Tensor a = random_tensor({n, n}, 1, -1.0, 1.0);
    const Tensor b = random_tensor({n, n}, 2, -1.0, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}

void bm_conv_depthwise3(benchmark::State& state) {
    const int64_t s = state.range(0);
    const Tensor x = random_tensor({16, s, s}, 3);
    const Tensor w = random_tensor({16, 3, 3}, 4, -0.1, 0.1);
    const Tensor b = Tensor::zeros({16});
    for (auto _ : state) benchmark::DoNotOptimize(conv2d_depthwise(x, w, b, 1));
}

void bm_conv_pointwise(benchmark::State& state) {
    const int64_t s = state.range(0);
    const Tensor x = random_tensor({16, s, s}, 5);
    const Tensor w = random_tensor({32, 16}, 6, -0.1, 0.1);
    const Tensor b = Tensor::zeros({32});
    for (auto _ : state) benchmark::DoNotOptimize(conv2d_pointwise(x, w, b));
}

void bm_sort_gather_roundtrip(benchmark::State& state) {
    const int64_t n = state.range(0);
    const Tensor x = random_tensor({16, n}, 7);
    for (auto _ : state) {
        auto [sorted, order] = sort_with_index(x, 1);
        benchmark::DoNotOptimize(gather(sorted, order.inverted()));
    }
}

void bm_fft2(benchmark::State& state) {
    const int64_t s = state.range(0);
    const Tensor x = random_tensor({3, s, s}, 8);
    for (auto _ : state) benchmark::DoNotOptimize(fft2_realimag(x));
}

void bm_softmax(benchmark::State& state) {
    const Tensor x = random_tensor({64, 1024}, 9, -4.0, 4.0);
    for (auto _ : state) benchmark::DoNotOptimize(softmax(x, 1));
}

void bm_histogram_attention(benchmark::State& state) {
    const int64_t s = state.range(0);
    const Tensor v = random_tensor({8, s, s}, 10, -1.0, 1.0);
    const Tensor f1 = random_tensor({16, s, s}, 11, -1.0, 1.0);
    const Tensor f2 = random_tensor({16, s, s}, 12, -1.0, 1.0);
    const HistConfig hist{16, 16};
    for (auto _ : state) benchmark::DoNotOptimize(histogram_attention(v, f1, f2, hist, 2));
}

void bm_htb_block(benchmark::State& state) {
    ParameterStore ps(21);
    const int64_t s = state.range(0);
    const HtbBlock block(ps, "htb", 16, 2, HistConfig{16, 16}, 2);
    const Tensor x = random_tensor({16, s, s}, 13, -0.5, 0.5);
    for (auto _ : state) benchmark::DoNotOptimize(block.forward(x));
}

void bm_model_restore_small(benchmark::State& state) {
    const Model m(small_net());
    const Tensor x = random_tensor({3, 16, 16}, 14);
    for (auto _ : state) benchmark::DoNotOptimize(m.restore(x));
}

void bm_model_restore_default(benchmark::State& state) {
    const Model m{NetConfig{}};
    const Tensor x = random_tensor({3, 64, 64}, 15);
    for (auto _ : state) benchmark::DoNotOptimize(m.restore(x));
}

void bm_train_step_small(benchmark::State& state) {
    TrainConfig cfg;
    cfg.net = small_net();
    cfg.epochs = 1;
    cfg.batch = 2;
    Trainer trainer(cfg);
    const auto data = make_dataset(2, 16, {{"haze", 1.0}}, 99);
    int64_t epoch = 0;
    for (auto _ : state) benchmark::DoNotOptimize(trainer.run_epoch(data, epoch++));
}

void bm_synth_pair(benchmark::State& state) {
    uint64_t seed = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(make_dataset(1, 64, {{"rain+haze", 1.0}}, seed++));
    }
}

BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_conv_depthwise3)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_conv_pointwise)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_sort_gather_roundtrip)->Arg(1024)->Arg(4096)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_fft2)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_softmax)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_histogram_attention)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_htb_block)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_model_restore_small)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_model_restore_default)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_train_step_small)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_synth_pair)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();

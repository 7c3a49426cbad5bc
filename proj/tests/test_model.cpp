#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "hformer/checkpoint.hpp"
#include "hformer/errors.hpp"
#include "hformer/losses.hpp"
#include "hformer/metrics.hpp"
#include "hformer/model.hpp"
#include "hformer/ops.hpp"
#include "hformer/optim.hpp"
#include "hformer/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/tmpdir.hpp"

using namespace hformer;
using hformer::testing::gradcheck;
using hformer::testing::random_tensor;
using hformer::testing::TempDir;

namespace {

NetConfig small_config() {
    NetConfig cfg;
    cfg.stage_widths = {4, 8, 16, 32};
    cfg.blocks_per_stage = {1, 1, 1, 1};
    cfg.bins = 4;
    cfg.bin_freq = 4;
    cfg.image_size = 16;
    cfg.seed = 11;
    return cfg;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    const std::span<const double> x = a.data(), y = b.data();
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] != y[i]) return false;
    }
    return true;
}

bool stores_equal(const ParameterStore& a, const ParameterStore& b) {
    if (a.size() != b.size()) return false;
    auto ia = a.all().begin();
    auto ib = b.all().begin();
    for (; ia != a.all().end(); ++ia, ++ib) {
        if (ia->first != ib->first || !bits_equal(ia->second, ib->second)) return false;
    }
    return true;
}

void expect_config_error(const std::function<void()>& fn, const std::string& needle) {
    try {
        fn();
        FAIL_CHECK("expected ConfigError mentioning '" << needle << "'");
    } catch (const ConfigError& e) {
        CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos,
                      "message '" << e.what() << "' does not mention '" << needle << "'");
    }
}

void perturb(ParameterStore& ps, uint64_t seed) {
    Rng rng(seed);
    for (const auto& [name, t] : ps.all()) {
        Tensor h = t;
        for (double& v : h.mutable_data()) v += rng.uniform(-0.05, 0.05);
    }
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

// ---------------------------------------------------------------------------
// NetConfig
// ---------------------------------------------------------------------------

TEST_CASE("netconfig: defaults validate; violations name the constraint") {
    CHECK_NOTHROW(NetConfig{}.validate());
    CHECK_NOTHROW(small_config().validate());

    expect_config_error([] {
        NetConfig c;
        c.stage_widths = {16, 32, 64};
        c.validate();
    }, "stage widths");
    expect_config_error([] {
        NetConfig c;
        c.blocks_per_stage = {1, 1};
        c.validate();
    }, "block counts");
    expect_config_error([] {
        NetConfig c;
        c.stage_widths = {16, 32, 64, 100};
        c.validate();
    }, "double");
    expect_config_error([] {
        NetConfig c;
        c.heads = 0;
        c.validate();
    }, "heads");
    expect_config_error([] {
        NetConfig c;
        c.heads = 3; // 16 % 3 != 0
        c.validate();
    }, "heads");
    expect_config_error([] {
        NetConfig c;
        c.bins = 0;
        c.validate();
    }, "bin");
    expect_config_error([] {
        NetConfig c;
        c.r = 0;
        c.validate();
    }, "expansion");
    expect_config_error([] {
        NetConfig c;
        c.blocks_per_stage = {1, 0, 1, 1};
        c.validate();
    }, "blocks per stage");
    expect_config_error([] {
        NetConfig c;
        c.image_size = 12;
        c.validate();
    }, "image size");
    expect_config_error([] {
        NetConfig c;
        c.image_size = 24; // multiple of 8 but not a power of two
        c.validate();
    }, "power of two");
}

TEST_CASE("netconfig: json round-trip") {
    NetConfig cfg = small_config();
    cfg.heads = 4;
    cfg.use_task_path = false;
    cfg.seed = 123456789;
    const NetConfig back = NetConfig::from_json(cfg.to_json());
    CHECK(back == cfg);

    CHECK_THROWS_AS(NetConfig::from_json("not json"), ParseError);
    CHECK_THROWS_AS(NetConfig::from_json(R"({"heads": "two"})"), ParseError);
    // Missing fields keep their defaults.
    const NetConfig sparse = NetConfig::from_json(R"({"image_size": 32})");
    CHECK(sparse.image_size == 32);
    CHECK(sparse.stage_widths == NetConfig{}.stage_widths);
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

TEST_CASE("model: same config and seed build bit-identical parameters") {
    const Model a(small_config());
    const Model b(small_config());
    CHECK(stores_equal(a.params(), b.params()));

    NetConfig other = small_config();
    other.seed = 12;
    const Model c(other);
    CHECK_FALSE(stores_equal(a.params(), c.params()));
}

TEST_CASE("model: default desk config parameter count is frozen") {
    const Model m{NetConfig{}};
    CHECK(m.params().size() == 422);
    CHECK(m.params().total_elements() == 1102756);
}

TEST_CASE("model: ablation toggles change the parameter table") {
    NetConfig no_task = small_config();
    no_task.use_task_path = false;
    const Model m(no_task);
    for (const auto& [name, t] : m.params().all()) {
        CHECK(name.find("tipb") == std::string::npos);
        CHECK(name.find("tsg") == std::string::npos);
        CHECK(name.find("spfi") == std::string::npos);
        CHECK(name.find("taskq") == std::string::npos);
    }
    NetConfig no_hist = small_config();
    no_hist.use_histogram = false;
    const Model plain(no_hist);
    for (const auto& [name, t] : plain.params().all()) {
        CHECK(name.find("dhsa") == std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

TEST_CASE("model: forward smoke on 32x32 with widths 4..32") {
    NetConfig cfg = small_config();
    cfg.image_size = 32;
    const Model m(cfg);
    Rng rng(90);
    const Tensor x = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    const Tensor out = m.forward(x, true);
    CHECK(out.shape() == x.shape());
    CHECK(out.all_finite());
    // Inference output is clamped, and forwards are deterministic.
    const Tensor inf1 = m.restore(x);
    const Tensor inf2 = m.restore(x);
    CHECK(bits_equal(inf1, inf2));
    for (double v : inf1.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("model: zero final projection is the exact identity") {
    Model m(small_config());
    Tensor w = m.params().get("final.pw.w");
    for (double& v : w.mutable_data()) v = 0.0;
    Rng rng(91);
    const Tensor x = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    CHECK(bits_equal(m.restore(x), x)); // global residual carries the input
    CHECK(std::isinf(psnr(m.restore(x), x)));
}

TEST_CASE("model: untrained output stays close to the input") {
    const Model m(small_config());
    Rng rng(92);
    const Tensor x = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    CHECK(psnr(m.restore(x), x) > 20.0); // tiny init keeps the residual dominant
}

TEST_CASE("model: input validation") {
    const Model m(small_config());
    CHECK_THROWS_AS(m.restore(Tensor::zeros({3, 8, 8})), ShapeError);
    CHECK_THROWS_AS(m.restore(Tensor::zeros({1, 16, 16})), ShapeError);
}

TEST_CASE("model: composite-loss gradients for sampled parameters") {
    Model m(small_config());
    Rng rng(93);
    const Tensor x = random_tensor({3, 16, 16}, rng, 0.1, 0.9);
    const Tensor target = random_tensor({3, 16, 16}, rng, 0.1, 0.9);
    const PerceptualExtractor extractor(1234);
    const auto fn = [&](const std::vector<Tensor>&) {
        return total_loss(extractor, m.forward(x, true), target, LossWeights{}).total;
    };
    for (const char* name : {"embed.pw.w", "enc1.htb0.dhsa.qkv.w", "final.pw.w"}) {
        REQUIRE(m.params().has(name));
        const auto r = gradcheck(fn, {m.params().get(name)}, 1e-5, 4);
        CHECK_MESSAGE(r.max_rel_err < 1e-4, name << ": " << r.worst);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint: save/load round-trip preserves forward outputs") {
    TempDir tmp("ckpt");
    const std::string path = tmp.str("model.hfrm");

    Model a(small_config());
    perturb(a.params(), 5);
    save_checkpoint(path, a.config().to_json(), a.params(), nullptr, 3);

    Model b(small_config());
    CHECK_FALSE(stores_equal(a.params(), b.params())); // perturbation took effect
    const uint64_t epoch = load_checkpoint(path, b.params(), nullptr);
    CHECK(epoch == 3);
    CHECK(stores_equal(a.params(), b.params()));

    Rng rng(94);
    const Tensor x = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    CHECK(bits_equal(a.restore(x), b.restore(x)));
    CHECK(peek_checkpoint_config(path) == a.config().to_json());
}

TEST_CASE("checkpoint: identical state serializes to identical bytes") {
    TempDir tmp("ckpt_bytes");
    const Model m(small_config());
    save_checkpoint(tmp.str("a.hfrm"), m.config().to_json(), m.params(), nullptr, 1);
    save_checkpoint(tmp.str("b.hfrm"), m.config().to_json(), m.params(), nullptr, 1);
    CHECK(slurp(tmp.str("a.hfrm")) == slurp(tmp.str("b.hfrm")));
}

TEST_CASE("checkpoint: truncated file fails without touching the store") {
    TempDir tmp("ckpt_trunc");
    const std::string path = tmp.str("model.hfrm");
    Model a(small_config());
    perturb(a.params(), 6);
    save_checkpoint(path, a.config().to_json(), a.params(), nullptr, 1);

    const std::string bytes = slurp(path);
    spit(path, bytes.substr(0, bytes.size() * 2 / 3)); // cut mid-payload

    Model b(small_config());
    const Model pristine(small_config());
    CHECK_THROWS_AS(load_checkpoint(path, b.params(), nullptr), ParseError);
    CHECK(stores_equal(b.params(), pristine.params())); // nothing was committed
}

TEST_CASE("checkpoint: structural mismatches are reported by name") {
    TempDir tmp("ckpt_mismatch");
    const std::string path = tmp.str("model.hfrm");
    const Model a(small_config());
    save_checkpoint(path, a.config().to_json(), a.params(), nullptr, 0);

    SUBCASE("changed expansion factor flags the first reshaped parameter") {
        NetConfig widened = small_config();
        widened.r = 1;
        Model b(widened);
        expect_config_error([&] { load_checkpoint(path, b.params(), nullptr); }, "msff");
    }
    SUBCASE("different block count flags the parameter count") {
        NetConfig deeper = small_config();
        deeper.blocks_per_stage = {1, 1, 2, 2};
        Model b(deeper);
        expect_config_error([&] { load_checkpoint(path, b.params(), nullptr); }, "parameters");
    }
    SUBCASE("requesting optimizer state from a bare checkpoint fails") {
        Model b(small_config());
        Adam adam(b.params());
        expect_config_error([&] { load_checkpoint(path, b.params(), &adam); },
                            "no optimizer state");
    }
}

TEST_CASE("checkpoint: corrupt headers are parse errors") {
    TempDir tmp("ckpt_magic");
    const Model m(small_config());
    const std::string path = tmp.str("model.hfrm");
    save_checkpoint(path, m.config().to_json(), m.params(), nullptr, 0);
    std::string bytes = slurp(path);

    SUBCASE("bad magic") {
        bytes[0] = 'X';
        spit(path, bytes);
        Model b(small_config());
        CHECK_THROWS_AS(load_checkpoint(path, b.params(), nullptr), ParseError);
    }
    SUBCASE("unsupported version") {
        bytes[4] = 2;
        spit(path, bytes);
        Model b(small_config());
        CHECK_THROWS_AS(load_checkpoint(path, b.params(), nullptr), ParseError);
    }
    SUBCASE("missing file") {
        Model b(small_config());
        CHECK_THROWS_AS(load_checkpoint(tmp.str("absent.hfrm"), b.params(), nullptr), DataError);
        CHECK_THROWS_AS(peek_checkpoint_config(tmp.str("absent.hfrm")), DataError);
    }
}

TEST_CASE("checkpoint: optimizer state round-trips bit-exactly") {
    TempDir tmp("ckpt_opt");
    const std::string path = tmp.str("opt.hfrm");

    ParameterStore ps(7);
    Tensor p1 = ps.normal("a.w", {3, 2});
    Tensor p2 = ps.normal("b.w", {4});
    Adam adam(ps, 1e-3);
    for (int step = 0; step < 3; ++step) {
        ps.zero_grad();
        Tape tape;
        {
            Tape::Scope scope(tape);
            tape.backward(sum(mul(p1, p1)) + sum(mul(p2, p2)));
        }
        adam.step();
    }
    save_checkpoint(path, "{}", ps, &adam, 9);

    ParameterStore ps2(8); // different seed: load must overwrite everything
    ps2.normal("a.w", {3, 2});
    ps2.normal("b.w", {4});
    Adam adam2(ps2, 1e-3);
    const uint64_t epoch = load_checkpoint(path, ps2, &adam2);
    CHECK(epoch == 9);
    CHECK(adam2.steps() == adam.steps());
    CHECK(stores_equal(ps, ps2));
    const auto& sa = adam.slots();
    const auto& sb = adam2.slots();
    REQUIRE(sa.size() == sb.size());
    auto ib = sb.begin();
    for (auto ia = sa.begin(); ia != sa.end(); ++ia, ++ib) {
        CHECK(ia->first == ib->first);
        CHECK(ia->second.m == ib->second.m);
        CHECK(ia->second.v == ib->second.v);
    }
    // Loading parameters only (optimizer = nullptr) skips the moments.
    ParameterStore ps3(9);
    ps3.normal("a.w", {3, 2});
    ps3.normal("b.w", {4});
    CHECK(load_checkpoint(path, ps3, nullptr) == 9);
    CHECK(stores_equal(ps, ps3));
}

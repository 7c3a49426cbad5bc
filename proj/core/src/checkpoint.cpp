#include "hformer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <utility>
#include <vector>

#include "hformer/errors.hpp"

namespace hformer {

namespace {

constexpr char kMagic[4] = {'H', 'F', 'R', 'M'};
constexpr uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw DataError("save_checkpoint: cannot open " + path);
    }
    void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) {
        uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
        bytes(b, 4);
    }
    void u64(uint64_t v) {
        uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
        bytes(b, 8);
    }
    void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
    void str(const std::string& s) { bytes(s.data(), s.size()); }
    void finish() {
        out_.flush();
        if (!out_) throw DataError("save_checkpoint: write failed for " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw DataError("checkpoint: cannot open " + path);
    }
    void bytes(void* p, size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n) {
            throw ParseError("checkpoint: " + path_ + " truncated at byte " +
                             std::to_string(offset_ + static_cast<uint64_t>(in_.gcount())));
        }
        offset_ += n;
    }
    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint8_t b[4];
        bytes(b, 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }
    uint64_t u64() {
        uint8_t b[8];
        bytes(b, 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    uint64_t offset() const { return offset_; }
    const std::string& path() const { return path_; }
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("checkpoint: " + path_ + ": " + what + " at byte " +
                         std::to_string(offset_));
    }

private:
    std::ifstream in_;
    std::string path_;
    uint64_t offset_ = 0;
};

void read_header(Reader& r) {
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic");
    const uint32_t version = r.u32();
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
}

} // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParameterStore& params, const Adam* optimizer, uint64_t epoch) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u64(config_json.size());
    w.str(config_json);
    w.u64(params.size());
    for (const auto& [name, tensor] : params.all()) {
        w.u32(static_cast<uint32_t>(name.size()));
        w.str(name);
        w.u32(static_cast<uint32_t>(tensor.rank()));
        for (int64_t d = 0; d < tensor.rank(); ++d) w.u64(static_cast<uint64_t>(tensor.dim(d)));
        for (double v : tensor.data()) w.f64(v);
    }
    w.u8(optimizer ? 1 : 0);
    if (optimizer) {
        w.u64(optimizer->steps());
        for (const auto& [name, slot] : optimizer->slots()) {
            for (double v : slot.m) w.f64(v);
            for (double v : slot.v) w.f64(v);
        }
    }
    w.u64(epoch);
    w.finish();
}

std::string peek_checkpoint_config(const std::string& path) {
    Reader r(path);
    read_header(r);
    const uint64_t len = r.u64();
    if (len > (1ull << 24)) r.fail("implausible config length " + std::to_string(len));
    return r.str(static_cast<size_t>(len));
}

uint64_t load_checkpoint(const std::string& path, ParameterStore& params, Adam* optimizer) {
    Reader r(path);
    read_header(r);
    const uint64_t config_len = r.u64();
    if (config_len > (1ull << 24)) r.fail("implausible config length " + std::to_string(config_len));
    r.str(static_cast<size_t>(config_len)); // config consumed by peek_checkpoint_config

    const uint64_t count = r.u64();
    if (count != params.size()) {
        throw ConfigError("checkpoint: file has " + std::to_string(count) +
                          " parameters, model expects " + std::to_string(params.size()));
    }
    // Stage every payload before touching the store so a corrupt or truncated
    // file leaves the model untouched.
    std::vector<std::pair<Tensor, std::vector<double>>> staged;
    staged.reserve(static_cast<size_t>(count));
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32();
        if (name_len > 4096) r.fail("implausible name length");
        const std::string name = r.str(name_len);
        if (!params.has(name)) throw ConfigError("checkpoint: unknown parameter " + name);
        Tensor tensor = params.get(name);
        const uint32_t rank = r.u32();
        if (rank != static_cast<uint32_t>(tensor.rank())) {
            throw ConfigError("checkpoint: rank mismatch for " + name);
        }
        for (uint32_t d = 0; d < rank; ++d) {
            if (r.u64() != static_cast<uint64_t>(tensor.dim(d))) {
                throw ConfigError("checkpoint: shape mismatch for " + name);
            }
        }
        std::vector<double> values(static_cast<size_t>(tensor.numel()));
        for (double& v : values) v = r.f64();
        staged.emplace_back(std::move(tensor), std::move(values));
    }

    const uint8_t has_optimizer = r.u8();
    if (has_optimizer > 1) r.fail("bad optimizer flag");
    uint64_t opt_steps = 0;
    std::map<std::string, Adam::Slot> slots;
    if (has_optimizer) {
        opt_steps = r.u64();
        for (const auto& [name, tensor] : params.all()) {
            Adam::Slot slot;
            const size_t n = static_cast<size_t>(tensor.numel());
            slot.m.resize(n);
            slot.v.resize(n);
            for (double& v : slot.m) v = r.f64();
            for (double& v : slot.v) v = r.f64();
            slots.emplace(name, std::move(slot));
        }
    } else if (optimizer) {
        throw ConfigError("checkpoint: " + path + " carries no optimizer state");
    }
    const uint64_t epoch = r.u64();

    for (auto& [tensor, values] : staged) {
        std::copy(values.begin(), values.end(), tensor.mutable_data().begin());
    }
    if (has_optimizer && optimizer) optimizer->restore(opt_steps, std::move(slots));
    return epoch;
}

} // namespace hformer

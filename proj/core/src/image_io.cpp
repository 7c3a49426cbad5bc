#include "hformer/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hformer/errors.hpp"

namespace hformer {

namespace fs = std::filesystem;

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("write_ppm: expected a [3,H,W] image, got " + shape_str(image.shape()));
    }
    const int64_t h = image.dim(1), w = image.dim(2), plane = h * w;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_ppm: cannot open " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    const double* p = image.data().data();
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                const double v = std::clamp(p[c * plane + y * w + x], 0.0, 1.0);
                row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw DataError("write_ppm: write failed for " + path);
}

namespace {

// Skips whitespace and '#' comments, then reads one unsigned decimal token.
int64_t next_ppm_int(std::istream& in, const std::string& path) {
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (std::isspace(ch)) {
            ch = in.get();
        } else {
            break;
        }
    }
    if (ch == EOF || !std::isdigit(ch)) {
        throw ParseError("read_ppm: malformed header in " + path + " at byte " +
                         std::to_string(static_cast<long long>(in.tellg()) - 1));
    }
    int64_t value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        ch = in.get();
    }
    if (ch != EOF) in.unget();
    return value;
}

} // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_ppm: cannot open " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '6') {
        throw ParseError("read_ppm: " + path + " is not a binary PPM (P6)");
    }
    const int64_t w = next_ppm_int(in, path);
    const int64_t h = next_ppm_int(in, path);
    const int64_t maxval = next_ppm_int(in, path);
    if (w <= 0 || h <= 0) throw ParseError("read_ppm: bad dimensions in " + path);
    if (maxval != 255) throw DataError("read_ppm: only maxval 255 supported, got " +
                                       std::to_string(maxval) + " in " + path);
    in.get(); // single whitespace byte after maxval
    std::vector<unsigned char> raw(static_cast<size_t>(w) * static_cast<size_t>(h) * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size()) {
        throw ParseError("read_ppm: truncated pixel data in " + path + " at byte " +
                         std::to_string(static_cast<long long>(in.tellg())));
    }
    Tensor img = Tensor::zeros({3, h, w});
    double* o = img.mutable_data().data();
    const int64_t plane = h * w;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                o[c * plane + y * w + x] =
                    static_cast<double>(raw[(static_cast<size_t>(y) * w + x) * 3 + c]) / 255.0;
            }
        }
    }
    return img;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("write_manifest: cannot open " + path);
    for (const ManifestRecord& r : records) {
        out << r.index << " kind=" << r.kind << " seed=" << r.seed
            << " params=" << (r.params.empty() ? "-" : r.params)
            << " clean=" << r.clean_path << " degraded=" << r.degraded_path << "\n";
    }
    if (!out) throw DataError("write_manifest: write failed for " + path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("read_manifest: cannot open " + path);
    std::vector<ManifestRecord> records;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestRecord r;
        if (!(ls >> r.index)) {
            throw ParseError("read_manifest: bad index on line " + std::to_string(lineno));
        }
        std::string token;
        while (ls >> token) {
            const size_t eq = token.find('=');
            if (eq == std::string::npos) {
                throw ParseError("read_manifest: expected key=value on line " +
                                 std::to_string(lineno) + ", got '" + token + "'");
            }
            const std::string key = token.substr(0, eq);
            const std::string value = token.substr(eq + 1);
            if (key == "kind") {
                r.kind = value;
            } else if (key == "seed") {
                try {
                    r.seed = std::stoull(value);
                } catch (const std::exception&) {
                    throw ParseError("read_manifest: bad seed on line " + std::to_string(lineno));
                }
            } else if (key == "params") {
                r.params = value == "-" ? "" : value;
            } else if (key == "clean") {
                r.clean_path = value;
            } else if (key == "degraded") {
                r.degraded_path = value;
            } else {
                throw ParseError("read_manifest: unknown key '" + key + "' on line " +
                                 std::to_string(lineno));
            }
        }
        if (r.kind.empty() || r.clean_path.empty() || r.degraded_path.empty()) {
            throw ParseError("read_manifest: missing fields on line " + std::to_string(lineno));
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::string write_dataset(const std::string& dir, const std::vector<ImagePair>& pairs) {
    fs::create_directories(dir);
    std::vector<ManifestRecord> records;
    records.reserve(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        char clean_name[40], degraded_name[40];
        std::snprintf(clean_name, sizeof(clean_name), "pair_%05zu_clean.ppm", i);
        std::snprintf(degraded_name, sizeof(degraded_name), "pair_%05zu_degraded.ppm", i);
        write_ppm((fs::path(dir) / clean_name).string(), pairs[i].clean);
        write_ppm((fs::path(dir) / degraded_name).string(), pairs[i].degraded);
        ManifestRecord r;
        r.index = static_cast<int64_t>(i);
        r.kind = weather_kind_name(pairs[i].kind);
        r.seed = pairs[i].seed;
        r.params = pairs[i].params;
        r.clean_path = clean_name;
        r.degraded_path = degraded_name;
        records.push_back(std::move(r));
    }
    const std::string manifest = (fs::path(dir) / "manifest.txt").string();
    write_manifest(manifest, records);
    return manifest;
}

std::vector<ImagePair> load_dataset(const std::string& manifest_path) {
    const std::vector<ManifestRecord> records = read_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<ImagePair> pairs;
    pairs.reserve(records.size());
    for (const ManifestRecord& r : records) {
        ImagePair pair;
        pair.clean = read_ppm((base / r.clean_path).string());
        pair.degraded = read_ppm((base / r.degraded_path).string());
        pair.kind = weather_kind_from_name(r.kind);
        pair.seed = r.seed;
        pair.params = r.params;
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

} // namespace hformer

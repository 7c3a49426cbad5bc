#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hformer/tensor.hpp"
#include "hformer/weather.hpp"

namespace hformer {

// Binary PPM (P6, maxval 255). Images are [3,H,W] float64 in [0,1]; writing
// quantizes with round(v*255) after clamping, reading divides by 255.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

struct ManifestRecord {
    int64_t index = 0;
    std::string kind;
    uint64_t seed = 0;
    std::string params;        // key:value;key:value or "-" when empty
    std::string clean_path;    // relative to the manifest directory
    std::string degraded_path; // relative to the manifest directory
};

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

// Writes images plus manifest.txt into `dir` (created if needed); returns the
// manifest path.
std::string write_dataset(const std::string& dir, const std::vector<ImagePair>& pairs);

// Reads a manifest and all referenced image pairs (paths resolved relative to
// the manifest's directory).
std::vector<ImagePair> load_dataset(const std::string& manifest_path);

} // namespace hformer

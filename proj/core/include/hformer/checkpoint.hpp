#pragma once

#include <cstdint>
#include <string>

#include "hformer/optim.hpp"
#include "hformer/params.hpp"

namespace hformer {

// Binary checkpoint, little-endian throughout:
//   magic "HFRM", u32 version,
//   u64 config length + config JSON bytes (opaque to this module),
//   u64 parameter count, then per parameter in name order:
//     u32 name length, name bytes, u32 rank, u64 dims..., f64 payload...,
//   u8 optimizer-present flag, if set: u64 step count, then per parameter in
//     the same order the f64 first and second moment vectors,
//   u64 epoch.
// Identical parameters and config serialize to identical bytes.

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParameterStore& params, const Adam* optimizer, uint64_t epoch);

// Reads only the embedded config JSON (cheap; skips the payload).
std::string peek_checkpoint_config(const std::string& path);

// Loads parameters (and optimizer state if both present and requested) into
// an already-built store; returns the stored epoch. Structural mismatches
// raise ConfigError naming the parameter; corrupt or truncated files raise
// ParseError with the byte offset.
uint64_t load_checkpoint(const std::string& path, ParameterStore& params, Adam* optimizer);

} // namespace hformer

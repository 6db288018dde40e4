#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "tscl/backbone.hpp"
#include "tscl/graph.hpp"

namespace tscl {

// Checkpoint directory layout:
//   <dir>/spec.txt            key = value encoder description
//   <dir>/params/<name>.bin   per-parameter little-endian float32 blobs
//   <dir>/manifest.txt        "<hash> <bytes> <file>" per blob
// Loading bit-reproduces the float32 payload that was saved.

std::uint64_t fnv1a_file(const std::filesystem::path& p);

void save_param_store(const std::filesystem::path& dir, const ParamStore& ps);
// Values are loaded into an existing store whose layout must match.
void load_param_store(const std::filesystem::path& dir, ParamStore& ps);

void save_encoder(const std::filesystem::path& dir, const Encoder& enc);
Encoder load_encoder(const std::filesystem::path& dir);
EncoderSpec load_encoder_spec(const std::filesystem::path& dir);

// Flat "key = value" helpers shared with run-directory artifacts.
void write_kv_file(const std::filesystem::path& p,
                   const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& p);

}  // namespace tscl

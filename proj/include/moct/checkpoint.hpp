// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (all integers little-endian):
//   magic "MOCT" | version u32 | header_len u32 | header (UTF-8 JSON config)
//   then per parameter in lexicographic name order:
//   name_len u32 | name | frozen u8 | rank u32 | dims u32 x rank | f32 data
// Round-trips are bit-exact. Writes go to a temp file and are renamed in.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "moct/config.hpp"
#include "moct/param_store.hpp"

namespace moct {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ParamStore params;
};

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const ModelConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a content hash of a file, as 16 hex digits; used for manifests and
// checkpoint identity.
std::string file_content_hash(const std::filesystem::path& path);

}  // namespace moct

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "trajmode/models.hpp"

namespace trajmode {

inline constexpr char kCheckpointMagic[4] = {'E', 'S', 'T', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers u32 little-endian):
//   "ESTM" | version | config length | config JSON (UTF-8) | parameter count |
//   per parameter, sorted by name: name length | name | rank | dims... | f32 LE values
void save_checkpoint(std::ostream& out, const Model<float>& model);
Model<float> load_checkpoint(std::istream& in);

void save_checkpoint_file(const std::filesystem::path& path, const Model<float>& model);
Model<float> load_checkpoint_file(const std::filesystem::path& path);

/// Checkpoint bytes as a string, handy for byte-level comparison.
std::string checkpoint_bytes(const Model<float>& model);

/// JSON echo of configuration, normalization statistics and fusion weights.
nlohmann::json model_header_to_json(const Model<float>& model);
void model_header_from_json(const nlohmann::json& j, Model<float>& model);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace trajmode

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "trajmode/models.hpp"
#include "trajmode/trajectory.hpp"

namespace trajmode {

/// One reproducible run description. JSON keys:
///   grid {cells_x, cells_y}, seq_len, tcn {hidden_units, kernel, dilation_base,
///   levels, dropout}, cnn {channels}, optimizer {lr, batch_size, epochs},
///   stl {period, inner_iterations, seasonal_span, trend_span, lowpass_span},
///   inject_weight, staypoint {dist_threshold_m, time_threshold_s}, split,
///   seed, partition_file, parallel, label_map {classes, aliases}.
struct PipelineConfig {
  ModelConfig model;
  StayPointConfig staypoint;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> partition_file;
  bool parallel = false;
};

/// Missing keys keep their defaults; unknown keys are rejected. A relative
/// partition_file is resolved against `base_dir`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const PipelineConfig& cfg);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

void validate(const PipelineConfig& cfg);

}  // namespace trajmode

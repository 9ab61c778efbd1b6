#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajmode/config.hpp"
#include "trajmode/models.hpp"
#include "trajmode/partition.hpp"

namespace trajmode {

struct IngestStats {
  int users = 0;
  int users_without_labels = 0;
  int files = 0;
  JoinStats join;
  std::map<std::string, int> segments_per_mode;
  int segments = 0;
};

/// GeoLife tree (the directory holding Data/, or Data/ itself) to a canonical
/// JSON Lines dataset. Users and files are visited in sorted order.
IngestStats cmd_ingest(const std::filesystem::path& geolife_dir, const PipelineConfig& cfg,
                       const std::filesystem::path& out_path);

/// Single checkpoint (model.ckpt, train_log.jsonl) or, with a partition file,
/// one checkpoint and log per trained partition plus manifest.json.
void cmd_train(const std::filesystem::path& dataset, const PipelineConfig& cfg, const std::filesystem::path& out_dir);

/// A loaded single model or partitioned model set.
struct Predictor {
  std::optional<Model<float>> single;
  PartitionSet partitions;
  std::map<std::string, Model<float>> by_partition;  // trained partitions only

  const ModelConfig& config() const;
};

/// Accepts a checkpoint file, a manifest.json, or a directory holding either.
Predictor load_predictor(const std::filesystem::path& path);

/// Throws Mismatch when the preprocessing settings in `user` differ from the
/// checkpoint's (grid, seq_len, stl, inject_weight, label map).
void check_compatible(const ModelConfig& checkpoint, const ModelConfig& user);

/// Fused labels in input order; nullopt for trajectories routed to a skipped partition.
std::vector<std::optional<int>> predict_dataset(const Predictor& predictor, const std::vector<Trajectory>& dataset);

/// Scores classified trajectories; every trajectory unclassified is an error.
nlohmann::json cmd_eval(const std::filesystem::path& dataset, const std::filesystem::path& model,
                        const std::optional<PipelineConfig>& user_cfg);

/// JSON Lines {"traj_id", "mode"} sorted by traj_id; mode null when unclassified.
void cmd_predict(const std::filesystem::path& dataset, const std::filesystem::path& model,
                 const std::optional<PipelineConfig>& user_cfg, const std::filesystem::path& out_path);

/// CSV v,y,trend,seasonal,residual for one trajectory's relative timestamps.
void cmd_decompose(const std::filesystem::path& dataset, const std::string& traj_id, const PipelineConfig& cfg,
                   const std::filesystem::path& out_csv);

/// Shortest round-trip decimal text of a double.
std::string format_double(double v);

}  // namespace trajmode

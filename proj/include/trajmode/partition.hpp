#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajmode/models.hpp"
#include "trajmode/trajectory.hpp"

namespace trajmode {

inline constexpr const char* kOuterPartition = "outer";

struct Partition {
  std::string name;
  std::vector<std::array<double, 2>> polygon;  // (lat, lon) vertices, implicitly closed
};

/// Ordered polygons plus the implicit trailing "outer" partition.
class PartitionSet {
 public:
  PartitionSet() = default;
  explicit PartitionSet(std::vector<Partition> partitions);

  const std::vector<Partition>& partitions() const { return partitions_; }
  /// Declared names followed by "outer".
  std::vector<std::string> names() const;

  friend bool operator==(const PartitionSet& a, const PartitionSet& b) { return a.names() == b.names(); }

 private:
  std::vector<Partition> partitions_;
};

/// {"partitions": [{"name": str, "polygon": [[lat, lon], ...]}, ...]}
PartitionSet partition_set_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PartitionSet& ps);
PartitionSet load_partition_file(const std::filesystem::path& path);

/// Three nested rectangles around a centre: urban_center, urban_area, suburb.
PartitionSet ring_template(double center_lat, double center_lon, double center_half_deg, double urban_half_deg,
                           double suburb_half_deg);

/// Even-odd ray casting in the (lat, lon) plane; boundary points count as inside.
bool polygon_contains(const std::vector<std::array<double, 2>>& polygon, double lat, double lon);

/// First containing polygon in declaration order, else "outer".
std::string point_partition(const GpsPoint& p, const PartitionSet& ps);

/// Partition holding the most points; ties resolved by declaration order.
std::string assign_trajectory(const Trajectory& traj, const PartitionSet& ps);

/// seed XOR FNV-1a(name).
std::uint64_t partition_seed(std::uint64_t seed, const std::string& name);

struct PartitionModel {
  std::string name;
  std::vector<std::size_t> members;  // dataset indices assigned here
  std::optional<TrainResult> result;   // empty when skipped
  std::string skip_reason;
};

struct PartitionedTraining {
  PartitionSet partitions;
  std::vector<PartitionModel> models;  // declaration order, "outer" last
};

/// One independent training run per partition with a derived seed; parallel
/// and serial execution give identical models. Partitions whose sub-dataset
/// cannot be trained (empty or single class) are skipped.
PartitionedTraining train_partitioned(const std::vector<Trajectory>& dataset, const PartitionSet& ps,
                                      const ModelConfig& config, std::uint64_t seed, bool parallel,
                                      const TrainOptions& options = {});

struct PartitionPrediction {
  std::string traj_id;
  std::optional<int> label;  // nullopt = unclassified
};

struct PartitionPredictions {
  std::string partition;
  bool skipped = false;
  std::vector<PartitionPrediction> predictions;
};

/// Union of per-partition predictions. Skipped partitions contribute their
/// trajectories as unclassified. Duplicate ids are an internal error.
std::vector<PartitionPrediction> fuse_predictions(const std::vector<PartitionPredictions>& sets);

}  // namespace trajmode

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace trajmode {

struct GpsPoint {
  std::size_t id = 0;  // position index within its trajectory
  double lat = 0.0;    // degrees
  double lon = 0.0;    // degrees
  double ts = 0.0;     // seconds since Unix epoch, UTC

  friend bool operator==(const GpsPoint&, const GpsPoint&) = default;
};

struct ClassLabel {
  std::string name;
  int index = 0;

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

/// Ordered set of class names plus raw-name aliases (GeoLife "car" etc.).
/// Indices are positions in `classes()`.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::vector<std::string> classes, std::map<std::string, std::string> aliases);

  /// walk, bike, bus, subway, private_car, taxi, train; "car" -> private_car.
  static LabelMap geolife_default();

  const std::vector<std::string>& classes() const { return classes_; }
  const std::map<std::string, std::string>& aliases() const { return aliases_; }
  int num_classes() const { return static_cast<int>(classes_.size()); }

  /// Resolves a raw mode name (canonical or alias). nullopt for unmapped modes.
  std::optional<ClassLabel> lookup(std::string_view raw_name) const;
  ClassLabel at(int index) const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::vector<std::string> classes_;
  std::map<std::string, std::string> aliases_;
};

struct Trajectory {
  std::string traj_id;
  std::vector<GpsPoint> points;
  std::optional<ClassLabel> mode;

  std::size_t size() const { return points.size(); }
  double duration() const { return points.empty() ? 0.0 : points.back().ts - points.front().ts; }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Throws Error(Precondition) if the trajectory breaks its invariants: non-empty,
/// coordinates in range, finite strictly increasing ts, ids 0..N-1.
void validate(const Trajectory& traj);

/// Reassigns point ids to 0..N-1 in order.
void renumber(std::vector<GpsPoint>& points);

struct LabelInterval {
  double start_ts = 0.0;
  double end_ts = 0.0;
  std::string mode_name;

  friend bool operator==(const LabelInterval&, const LabelInterval&) = default;
};

struct StayPointConfig {
  double dist_threshold_m = 200.0;
  double time_threshold_s = 1200.0;
};

void validate(const StayPointConfig& cfg);

/// Seconds since epoch for a UTC civil time. Throws Error(Parse) on out-of-range fields.
double utc_seconds(int year, int month, int day, int hour, int minute, double second);

/// Parses a GeoLife PLT file. Points with a timestamp not after the previously
/// kept point are dropped (keeps the first of duplicates).
Trajectory parse_plt(std::string_view content, std::string traj_id = {});

/// Parses GeoLife labels.txt: header line then "start\tend\tmode" rows.
std::vector<LabelInterval> parse_labels(std::string_view content);

struct JoinStats {
  std::size_t points_in = 0;
  std::size_t points_kept = 0;
  std::size_t points_outside = 0;         // covered by no interval
  std::size_t points_unmapped_mode = 0;   // inside an interval whose mode is not in the label map
  std::size_t runs_dropped_unmapped = 0;  // runs discarded because of unmapped modes
};

struct JoinResult {
  std::vector<Trajectory> trajectories;
  JoinStats stats;
};

/// Labels maximal runs of consecutive points falling inside one interval (closed
/// bounds). Output ids are "<traj_id>#<run>".
JoinResult label_join(const Trajectory& traj, std::vector<LabelInterval> intervals, const LabelMap& label_map);

/// Cuts a trajectory at stay points and removes them. Output ids are "<traj_id>.<k>".
std::vector<Trajectory> segment_stay_points(const Trajectory& traj, const StayPointConfig& cfg);

// Canonical dataset: JSON Lines, one {"id", "mode", "points": [[lat, lon, ts], ...]} per trajectory.
void write_dataset(std::ostream& out, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> read_dataset(std::istream& in, const LabelMap& label_map);

void write_dataset_file(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> read_dataset_file(const std::filesystem::path& path, const LabelMap& label_map);

std::string read_file(const std::filesystem::path& path);

}  // namespace trajmode

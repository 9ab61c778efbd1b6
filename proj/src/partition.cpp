#include "trajmode/partition.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#include "trajmode/error.hpp"

namespace trajmode {

using nlohmann::json;

PartitionSet::PartitionSet(std::vector<Partition> partitions) : partitions_(std::move(partitions)) {
  std::set<std::string> seen;
  for (const auto& p : partitions_) {
    if (p.name.empty() || p.name == kOuterPartition)
      throw Error(ErrorKind::Config, "partition name must be non-empty and not 'outer'");
    if (!seen.insert(p.name).second) throw Error(ErrorKind::Config, "duplicate partition name '" + p.name + "'");
    if (p.polygon.size() < 3) throw Error(ErrorKind::Config, "partition '" + p.name + "' needs at least 3 vertices");
    for (const auto& v : p.polygon)
      if (!std::isfinite(v[0]) || !std::isfinite(v[1]))
        throw Error(ErrorKind::Config, "partition '" + p.name + "' has a non-finite vertex");
  }
}

std::vector<std::string> PartitionSet::names() const {
  std::vector<std::string> out;
  for (const auto& p : partitions_) out.push_back(p.name);
  out.emplace_back(kOuterPartition);
  return out;
}

PartitionSet partition_set_from_json(const json& j) {
  try {
    for (const auto& [key, _] : j.items())
      if (key != "partitions") throw Error(ErrorKind::Config, "unknown partition config key '" + key + "'");
    std::vector<Partition> parts;
    for (const json& p : j.at("partitions")) {
      Partition part;
      part.name = p.at("name").get<std::string>();
      for (const json& v : p.at("polygon")) {
        if (!v.is_array() || v.size() != 2) throw Error(ErrorKind::Config, "polygon vertex must be [lat, lon]");
        part.polygon.push_back({v[0].get<double>(), v[1].get<double>()});
      }
      parts.push_back(std::move(part));
    }
    return PartitionSet(std::move(parts));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad partition config: ") + e.what());
  }
}

json to_json(const PartitionSet& ps) {
  json parts = json::array();
  for (const auto& p : ps.partitions()) {
    json poly = json::array();
    for (const auto& v : p.polygon) poly.push_back({v[0], v[1]});
    parts.push_back({{"name", p.name}, {"polygon", std::move(poly)}});
  }
  return json{{"partitions", std::move(parts)}};
}

PartitionSet load_partition_file(const std::filesystem::path& path) {
  try {
    return partition_set_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, "bad partition file '" + path.string() + "': " + e.what());
  }
}

PartitionSet ring_template(double center_lat, double center_lon, double center_half_deg, double urban_half_deg,
                           double suburb_half_deg) {
  auto square = [&](double half) {
    return std::vector<std::array<double, 2>>{{center_lat - half, center_lon - half},
                                              {center_lat - half, center_lon + half},
                                              {center_lat + half, center_lon + half},
                                              {center_lat + half, center_lon - half}};
  };
  // First match wins, so inner rings are listed first.
  return PartitionSet({{"urban_center", square(center_half_deg)},
                       {"urban_area", square(urban_half_deg)},
                       {"suburb", square(suburb_half_deg)}});
}

bool polygon_contains(const std::vector<std::array<double, 2>>& polygon, double lat, double lon) {
  const std::size_t n = polygon.size();
  // Boundary.
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double y1 = polygon[j][0], x1 = polygon[j][1], y2 = polygon[i][0], x2 = polygon[i][1];
    const double cross = (x2 - x1) * (lat - y1) - (y2 - y1) * (lon - x1);
    const double scale = std::max({std::abs(x2 - x1), std::abs(y2 - y1), 1e-300});
    if (std::abs(cross) <= 1e-12 * scale && lon >= std::min(x1, x2) && lon <= std::max(x1, x2) &&
        lat >= std::min(y1, y2) && lat <= std::max(y1, y2))
      return true;
  }
  // Even-odd crossings of a ray towards +lon.
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double yi = polygon[i][0], xi = polygon[i][1], yj = polygon[j][0], xj = polygon[j][1];
    if ((yi > lat) != (yj > lat)) {
      const double x_cross = xj + (lat - yj) * (xi - xj) / (yi - yj);
      if (lon < x_cross) inside = !inside;
    }
  }
  return inside;
}

std::string point_partition(const GpsPoint& p, const PartitionSet& ps) {
  for (const auto& part : ps.partitions())
    if (polygon_contains(part.polygon, p.lat, p.lon)) return part.name;
  return kOuterPartition;
}

std::string assign_trajectory(const Trajectory& traj, const PartitionSet& ps) {
  if (traj.points.empty()) throw Error(ErrorKind::Precondition, "cannot assign an empty trajectory");
  const auto names = ps.names();
  std::map<std::string, std::size_t> counts;
  for (const auto& p : traj.points) ++counts[point_partition(p, ps)];
  std::string best;
  std::size_t best_count = 0;
  for (const auto& name : names) {
    const std::size_t c = counts[name];
    if (c > best_count) {
      best_count = c;
      best = name;
    }
  }
  return best;
}

std::uint64_t partition_seed(std::uint64_t seed, const std::string& name) { return seed ^ fnv1a64(name); }

PartitionedTraining train_partitioned(const std::vector<Trajectory>& dataset, const PartitionSet& ps,
                                      const ModelConfig& config, std::uint64_t seed, bool parallel,
                                      const TrainOptions& options) {
  PartitionedTraining out;
  out.partitions = ps;
  const auto names = ps.names();
  for (const auto& name : names) out.models.push_back(PartitionModel{name, {}, std::nullopt, {}});
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::string name = assign_trajectory(dataset[i], ps);
    const auto it = std::find(names.begin(), names.end(), name);
    out.models[static_cast<std::size_t>(it - names.begin())].members.push_back(i);
  }

  const std::vector<int> labels = dataset_labels(dataset);
  std::vector<std::size_t> runnable;
  for (std::size_t k = 0; k < out.models.size(); ++k) {
    auto& pm = out.models[k];
    std::set<int> classes;
    for (std::size_t i : pm.members) classes.insert(labels[i]);
    if (pm.members.empty()) {
      pm.skip_reason = "no trajectories";
    } else if (classes.size() < 2) {
      pm.skip_reason = "fewer than two classes";
      std::cerr << "warning: skipping partition '" << pm.name << "': " << pm.skip_reason << '\n';
    } else {
      runnable.push_back(k);
    }
  }
  if (runnable.empty()) throw Error(ErrorKind::Data, "every partition was skipped; nothing to train");

  std::vector<std::exception_ptr> errors(out.models.size());
  auto run = [&](std::size_t k) {
    try {
      auto& pm = out.models[k];
      std::vector<Trajectory> subset;
      subset.reserve(pm.members.size());
      for (std::size_t i : pm.members) subset.push_back(dataset[i]);
      pm.result = train(subset, config, partition_seed(seed, pm.name), options);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };

  if (parallel) {
    std::vector<std::jthread> workers;
    for (std::size_t k : runnable) workers.emplace_back(run, k);
  } else {
    for (std::size_t k : runnable) run(k);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<PartitionPrediction> fuse_predictions(const std::vector<PartitionPredictions>& sets) {
  std::vector<PartitionPrediction> fused;
  std::set<std::string> seen;
  for (const auto& set : sets) {
    for (const auto& p : set.predictions) {
      if (!seen.insert(p.traj_id).second)
        throw Error(ErrorKind::Internal, "trajectory '" + p.traj_id + "' predicted by more than one partition");
      fused.push_back(PartitionPrediction{p.traj_id, set.skipped ? std::nullopt : p.label});
    }
  }
  return fused;
}

}  // namespace trajmode

#include "trajmode/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "trajmode/checkpoint.hpp"
#include "trajmode/error.hpp"
#include "trajmode/metrics.hpp"
#include "trajmode/stl.hpp"

namespace trajmode {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

std::string epoch_log_jsonl(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) {
    json j = {{"epoch", e.epoch},   {"loss", e.loss},   {"cnn_loss", e.cnn_loss}, {"tcn_loss", e.tcn_loss},
              {"r1", e.r1},         {"r2", e.r2},       {"alpha", e.alpha},       {"beta", e.beta},
              {"val_acc", e.val_acc}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string file_stem_for(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

constexpr const char* kManifestFormat = "trajmode-partitions";

}  // namespace

// ---------------------------------------------------------------------------
// ingest

IngestStats cmd_ingest(const fs::path& geolife_dir, const PipelineConfig& cfg, const fs::path& out_path) {
  if (!fs::is_directory(geolife_dir)) throw Error(ErrorKind::Io, "not a directory: '" + geolife_dir.string() + "'");
  const fs::path data = fs::is_directory(geolife_dir / "Data") ? geolife_dir / "Data" : geolife_dir;

  IngestStats stats;
  std::vector<Trajectory> dataset;
  for (const fs::path& user_dir : sorted_entries(data, true)) {
    ++stats.users;
    const std::string user = user_dir.filename().string();
    const fs::path labels_path = user_dir / "labels.txt";
    if (!fs::is_regular_file(labels_path)) {
      ++stats.users_without_labels;
      continue;
    }
    std::vector<LabelInterval> intervals;
    try {
      intervals = parse_labels(read_file(labels_path));
    } catch (const Error& e) {
      throw Error(e.kind(), labels_path.string() + ": " + e.what());
    }
    const fs::path traj_dir = user_dir / "Trajectory";
    if (!fs::is_directory(traj_dir)) continue;
    for (const fs::path& plt : sorted_entries(traj_dir, false)) {
      if (plt.extension() != ".plt") continue;
      ++stats.files;
      Trajectory raw;
      try {
        raw = parse_plt(read_file(plt), user + "/" + plt.stem().string());
      } catch (const Error& e) {
        throw Error(e.kind(), plt.string() + ": " + e.what());
      }
      const JoinResult joined = label_join(raw, intervals, cfg.model.labels);
      stats.join.points_in += joined.stats.points_in;
      stats.join.points_kept += joined.stats.points_kept;
      stats.join.points_outside += joined.stats.points_outside;
      stats.join.points_unmapped_mode += joined.stats.points_unmapped_mode;
      stats.join.runs_dropped_unmapped += joined.stats.runs_dropped_unmapped;
      for (const Trajectory& run : joined.trajectories)
        for (Trajectory& seg : segment_stay_points(run, cfg.staypoint)) {
          ++stats.segments_per_mode[seg.mode->name];
          dataset.push_back(std::move(seg));
        }
    }
  }
  stats.segments = static_cast<int>(dataset.size());
  if (dataset.empty()) throw Error(ErrorKind::Data, "no labeled segments found under '" + geolife_dir.string() + "'");
  write_dataset_file(out_path, dataset);
  return stats;
}

// ---------------------------------------------------------------------------
// train

void cmd_train(const fs::path& dataset_path, const PipelineConfig& cfg, const fs::path& out_dir) {
  const auto dataset = read_dataset_file(dataset_path, cfg.model.labels);
  fs::create_directories(out_dir);
  if (!cfg.partition_file) {
    const TrainResult result = train(dataset, cfg.model, cfg.seed);
    save_checkpoint_file(out_dir / "model.ckpt", result.model);
    write_text(out_dir / "train_log.jsonl", epoch_log_jsonl(result.log));
    return;
  }

  const PartitionSet ps = load_partition_file(*cfg.partition_file);
  const PartitionedTraining trained = train_partitioned(dataset, ps, cfg.model, cfg.seed, cfg.parallel);
  json models = json::array();
  for (const auto& pm : trained.models) {
    json entry = {{"name", pm.name}, {"trajectories", pm.members.size()}};
    if (pm.result) {
      const std::string stem = file_stem_for(pm.name);
      save_checkpoint_file(out_dir / (stem + ".ckpt"), pm.result->model);
      write_text(out_dir / (stem + ".train_log.jsonl"), epoch_log_jsonl(pm.result->log));
      entry["checkpoint"] = stem + ".ckpt";
      entry["log"] = stem + ".train_log.jsonl";
    } else {
      entry["checkpoint"] = nullptr;
      entry["skip_reason"] = pm.skip_reason;
    }
    models.push_back(std::move(entry));
  }
  json manifest = {{"format", kManifestFormat},
                   {"version", 1},
                   {"seed", cfg.seed},
                   {"partitions", to_json(ps).at("partitions")},
                   {"models", std::move(models)}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// prediction

const ModelConfig& Predictor::config() const {
  if (single) return single->config;
  if (by_partition.empty()) throw Error(ErrorKind::Internal, "predictor holds no model");
  return by_partition.begin()->second.config;
}

Predictor load_predictor(const fs::path& path) {
  fs::path file = path;
  if (fs::is_directory(path)) file = fs::exists(path / "manifest.json") ? path / "manifest.json" : path / "model.ckpt";
  Predictor p;
  if (file.extension() != ".json") {
    p.single = load_checkpoint_file(file);
    return p;
  }
  json manifest;
  try {
    manifest = json::parse(read_file(file));
    if (manifest.at("format").get<std::string>() != kManifestFormat)
      throw Error(ErrorKind::Checkpoint, "'" + file.string() + "' is not a partition manifest");
    p.partitions = partition_set_from_json(json{{"partitions", manifest.at("partitions")}});
    for (const json& m : manifest.at("models")) {
      if (m.at("checkpoint").is_null()) continue;
      p.by_partition.emplace(m.at("name").get<std::string>(),
                             load_checkpoint_file(file.parent_path() / m.at("checkpoint").get<std::string>()));
    }
  } catch (const Error&) {
    throw;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Checkpoint, "bad manifest '" + file.string() + "': " + e.what());
  }
  if (p.by_partition.empty()) throw Error(ErrorKind::Checkpoint, "manifest lists no trained partition");
  const ModelConfig& first = p.by_partition.begin()->second.config;
  for (const auto& [name, model] : p.by_partition)
    if (!(model.config == first)) throw Error(ErrorKind::Mismatch, "partition '" + name + "' uses a different config");
  return p;
}

void check_compatible(const ModelConfig& ckpt, const ModelConfig& user) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::Mismatch, "config mismatch: " + what + " differs from the checkpoint");
  };
  if (!(ckpt.grid == user.grid)) fail("grid");
  if (ckpt.tcn.seq_len != user.tcn.seq_len) fail("seq_len");
  if (!(ckpt.stl == user.stl)) fail("stl");
  if (ckpt.inject_weight != user.inject_weight) fail("inject_weight");
  if (!(ckpt.labels == user.labels)) fail("label_map");
}

std::vector<std::optional<int>> predict_dataset(const Predictor& predictor, const std::vector<Trajectory>& dataset) {
  std::vector<std::optional<int>> out(dataset.size());
  if (dataset.empty()) return out;
  if (predictor.single) {
    const auto labels = predict(*predictor.single, dataset);
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i];
    return out;
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.size(); ++i) groups[assign_trajectory(dataset[i], predictor.partitions)].push_back(i);
  std::vector<PartitionPredictions> sets;
  for (const auto& name : predictor.partitions.names()) {
    auto g = groups.find(name);
    if (g == groups.end()) continue;
    PartitionPredictions set{name, false, {}};
    auto m = predictor.by_partition.find(name);
    if (m == predictor.by_partition.end()) {
      set.skipped = true;
      for (std::size_t i : g->second) set.predictions.push_back({dataset[i].traj_id, std::nullopt});
    } else {
      std::vector<Trajectory> subset;
      for (std::size_t i : g->second) subset.push_back(dataset[i]);
      const auto labels = predict(m->second, subset);
      for (std::size_t k = 0; k < labels.size(); ++k) set.predictions.push_back({subset[k].traj_id, labels[k]});
    }
    sets.push_back(std::move(set));
  }
  const auto fused = fuse_predictions(sets);
  std::map<std::string, std::optional<int>> by_id;
  for (const auto& p : fused) by_id.emplace(p.traj_id, p.label);
  for (std::size_t i = 0; i < dataset.size(); ++i) out[i] = by_id.at(dataset[i].traj_id);
  return out;
}

namespace {

Predictor load_checked(const fs::path& model, const std::optional<PipelineConfig>& user_cfg) {
  Predictor predictor = load_predictor(model);
  if (user_cfg) {
    check_compatible(predictor.config(), user_cfg->model);
    if (user_cfg->partition_file) {
      if (predictor.single) throw Error(ErrorKind::Mismatch, "partition file given for an unpartitioned checkpoint");
      if (to_json(load_partition_file(*user_cfg->partition_file)) != to_json(predictor.partitions))
        throw Error(ErrorKind::Mismatch, "partition file differs from the one used in training");
    }
  }
  return predictor;
}

}  // namespace

json cmd_eval(const fs::path& dataset_path, const fs::path& model, const std::optional<PipelineConfig>& user_cfg) {
  const Predictor predictor = load_checked(model, user_cfg);
  const LabelMap& labels = predictor.config().labels;
  const auto dataset = read_dataset_file(dataset_path, labels);
  const std::vector<int> truth_all = dataset_labels(dataset);
  const auto predicted = predict_dataset(predictor, dataset);

  std::vector<int> truth, pred;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!predicted[i]) continue;
    truth.push_back(truth_all[i]);
    pred.push_back(*predicted[i]);
  }
  if (truth.empty()) throw Error(ErrorKind::Data, "no trajectory could be classified");
  json report = to_json(macro_metrics(confusion(truth, pred, labels.num_classes())), labels.classes());
  report["counts"]["evaluated"] = truth.size();
  report["counts"]["unclassified"] = dataset.size() - truth.size();
  return report;
}

void cmd_predict(const fs::path& dataset_path, const fs::path& model, const std::optional<PipelineConfig>& user_cfg,
                 const fs::path& out_path) {
  const Predictor predictor = load_checked(model, user_cfg);
  const LabelMap& labels = predictor.config().labels;
  const auto dataset = read_dataset_file(dataset_path, labels);
  const auto predicted = predict_dataset(predictor, dataset);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return dataset[a].traj_id < dataset[b].traj_id; });
  std::string out;
  for (std::size_t i : order) {
    json rec = {{"traj_id", dataset[i].traj_id},
                {"mode", predicted[i] ? json(labels.at(*predicted[i]).name) : json(nullptr)}};
    out += rec.dump() + "\n";
  }
  write_text(out_path, out);
}

// ---------------------------------------------------------------------------
// decompose

void cmd_decompose(const fs::path& dataset_path, const std::string& traj_id, const PipelineConfig& cfg,
                   const fs::path& out_csv) {
  const auto dataset = read_dataset_file(dataset_path, cfg.model.labels);
  const auto it = std::find_if(dataset.begin(), dataset.end(), [&](const Trajectory& t) { return t.traj_id == traj_id; });
  if (it == dataset.end()) throw Error(ErrorKind::Data, "unknown trajectory id '" + traj_id + "'");
  const StlDecomposition d = stl_decompose(relative_timestamps(*it), cfg.model.stl);
  std::string out = "v,y,trend,seasonal,residual\n";
  for (Eigen::Index v = 0; v < d.y.size(); ++v)
    out += std::to_string(v) + "," + format_double(d.y[v]) + "," + format_double(d.trend[v]) + "," +
           format_double(d.seasonal[v]) + "," + format_double(d.residual[v]) + "\n";
  write_text(out_csv, out);
}

}  // namespace trajmode

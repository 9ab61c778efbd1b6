#include "trajmode/config.hpp"

#include <initializer_list>

#include "trajmode/error.hpp"

namespace trajmode {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(ErrorKind::Config, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorKind::Config, "unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace

void validate(const PipelineConfig& cfg) {
  validate(cfg.model);
  validate(cfg.staypoint);
}

PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  PipelineConfig cfg;
  try {
    check_keys(j, "", {"grid", "seq_len", "tcn", "cnn", "optimizer", "stl", "inject_weight", "staypoint", "split",
                       "seed", "partition_file", "parallel", "label_map"});
    ModelConfig& m = cfg.model;
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      check_keys(g, "grid.", {"cells_x", "cells_y"});
      read(g, "cells_x", m.grid.cells_x);
      read(g, "cells_y", m.grid.cells_y);
    }
    read(j, "seq_len", m.tcn.seq_len);
    if (j.contains("tcn")) {
      const json& t = j.at("tcn");
      check_keys(t, "tcn.", {"hidden_units", "kernel", "dilation_base", "levels", "dropout"});
      read(t, "hidden_units", m.tcn.hidden_units);
      read(t, "kernel", m.tcn.kernel);
      read(t, "dilation_base", m.tcn.dilation_base);
      read(t, "levels", m.tcn.levels);
      read(t, "dropout", m.tcn.dropout);
    }
    if (j.contains("cnn")) {
      const json& c = j.at("cnn");
      check_keys(c, "cnn.", {"channels"});
      read(c, "channels", m.cnn.channels);
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      check_keys(o, "optimizer.", {"lr", "batch_size", "epochs"});
      read(o, "lr", m.train.lr);
      read(o, "batch_size", m.train.batch_size);
      read(o, "epochs", m.train.epochs);
    }
    if (j.contains("stl")) {
      const json& s = j.at("stl");
      check_keys(s, "stl.", {"period", "inner_iterations", "seasonal_span", "trend_span", "lowpass_span"});
      if (s.contains("period")) m.stl = StlConfig::for_period(s.at("period").get<int>());
      read(s, "inner_iterations", m.stl.inner_iterations);
      read(s, "seasonal_span", m.stl.seasonal_span);
      read(s, "trend_span", m.stl.trend_span);
      read(s, "lowpass_span", m.stl.lowpass_span);
    }
    read(j, "inject_weight", m.inject_weight);
    if (j.contains("staypoint")) {
      const json& sp = j.at("staypoint");
      check_keys(sp, "staypoint.", {"dist_threshold_m", "time_threshold_s"});
      read(sp, "dist_threshold_m", cfg.staypoint.dist_threshold_m);
      read(sp, "time_threshold_s", cfg.staypoint.time_threshold_s);
    }
    read(j, "split", m.train.split);
    read(j, "seed", cfg.seed);
    if (j.contains("partition_file") && !j.at("partition_file").is_null()) {
      std::filesystem::path p = j.at("partition_file").get<std::string>();
      cfg.partition_file = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    read(j, "parallel", cfg.parallel);
    if (j.contains("label_map")) {
      const json& l = j.at("label_map");
      check_keys(l, "label_map.", {"classes", "aliases"});
      std::map<std::string, std::string> aliases;
      read(l, "aliases", aliases);
      m.labels = LabelMap(l.at("classes").get<std::vector<std::string>>(), std::move(aliases));
    }
  } catch (const Error&) {
    throw;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad config value: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

json to_json(const PipelineConfig& cfg) {
  const ModelConfig& m = cfg.model;
  json j;
  j["grid"] = {{"cells_x", m.grid.cells_x}, {"cells_y", m.grid.cells_y}};
  j["seq_len"] = m.tcn.seq_len;
  j["tcn"] = {{"hidden_units", m.tcn.hidden_units},
              {"kernel", m.tcn.kernel},
              {"dilation_base", m.tcn.dilation_base},
              {"levels", m.tcn.levels},
              {"dropout", m.tcn.dropout}};
  j["cnn"] = {{"channels", m.cnn.channels}};
  j["optimizer"] = {{"lr", m.train.lr}, {"batch_size", m.train.batch_size}, {"epochs", m.train.epochs}};
  j["stl"] = {{"period", m.stl.period},
              {"inner_iterations", m.stl.inner_iterations},
              {"seasonal_span", m.stl.seasonal_span},
              {"trend_span", m.stl.trend_span},
              {"lowpass_span", m.stl.lowpass_span}};
  j["inject_weight"] = m.inject_weight;
  j["staypoint"] = {{"dist_threshold_m", cfg.staypoint.dist_threshold_m},
                    {"time_threshold_s", cfg.staypoint.time_threshold_s}};
  j["split"] = m.train.split;
  j["seed"] = cfg.seed;
  j["partition_file"] = cfg.partition_file ? json(cfg.partition_file->string()) : json(nullptr);
  j["parallel"] = cfg.parallel;
  j["label_map"] = {{"classes", m.labels.classes()}, {"aliases", m.labels.aliases()}};
  return j;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, "bad config file '" + path.string() + "': " + e.what());
  }
  return pipeline_config_from_json(j, path.parent_path());
}

}  // namespace trajmode

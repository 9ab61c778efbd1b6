#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "trajmode/checkpoint.hpp"
#include "trajmode/config.hpp"
#include "trajmode/error.hpp"
#include "trajmode/metrics.hpp"
#include "trajmode/pipeline.hpp"

using namespace trajmode;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures = TRAJMODE_FIXTURES;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("trajmode_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const json kTinyConfig = json::parse(R"({
  "grid": {"cells_x": 6, "cells_y": 5},
  "seq_len": 16,
  "cnn": {"channels": [3, 4]},
  "tcn": {"hidden_units": 4, "levels": 2},
  "optimizer": {"epochs": 3, "batch_size": 8},
  "stl": {"period": 4},
  "seed": 11,
  "label_map": {"classes": ["walk", "car"]}
})");

std::vector<Trajectory> tiny_data(int per_class = 10, double lat = 39.9, double lon = 116.4) {
  testing::SyntheticOptions opt;
  opt.per_class = per_class;
  opt.points = 40;
  opt.cadence_period = 4;
  opt.center_lat = lat;
  opt.center_lon = lon;
  opt.spread_deg = 0.01;
  return testing::synthetic_dataset(opt, static_cast<std::uint64_t>(lat * 1000));
}

int run_cli(const std::string& args, const fs::path& stderr_file) {
  const std::string cmd = std::string(TRAJMODE_CLI) + " " + args + " 2> " + stderr_file.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(read_file(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("ingest the mini GeoLife tree") {
  const fs::path dir = scratch("ingest");
  const IngestStats s = cmd_ingest(kFixtures / "geolife", PipelineConfig{}, dir / "a.jsonl");
  CHECK(s.users == 3);
  CHECK(s.users_without_labels == 1);
  CHECK(s.files == 3);
  CHECK(s.segments == 5);
  CHECK(s.segments_per_mode == std::map<std::string, int>{{"bus", 1}, {"private_car", 2}, {"taxi", 1}, {"walk", 1}});
  const auto data = read_dataset_file(dir / "a.jsonl", LabelMap::geolife_default());
  REQUIRE(data.size() == 5);
  CHECK(data[0].traj_id == "000/20081023025304#0");
  CHECK(data[0].size() == 15);
  CHECK(data[2].size() == 7);
  CHECK(data[3].size() == 10);
  CHECK(data[4].traj_id.rfind("001/", 0) == 0);
  cmd_ingest(kFixtures / "geolife" / "Data", PipelineConfig{}, dir / "b.jsonl");
  CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
}

TEST_CASE("ingest errors") {
  const fs::path dir = scratch("ingest_err");
  fs::create_directories(dir / "tree" / "Data" / "u" / "Trajectory");
  fs::copy_file(kFixtures / "sample_100.plt", dir / "tree" / "Data" / "u" / "Trajectory" / "x.plt");
  try {
    cmd_ingest(dir / "tree", PipelineConfig{}, dir / "out.jsonl");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
  CHECK_THROWS_AS(cmd_ingest(dir / "missing", PipelineConfig{}, dir / "out.jsonl"), Error);
}

TEST_CASE("pipeline config") {
  const PipelineConfig d = pipeline_config_from_json(json::object());
  CHECK(d.model.grid.cells_x == 40);
  CHECK(d.model.tcn.seq_len == 300);
  CHECK(d.model.tcn.hidden_units == 25);
  CHECK(d.model.train.batch_size == 64);
  CHECK(d.model.train.epochs == 20);
  CHECK(d.model.train.lr == 0.002);
  CHECK(d.model.train.split == 0.8);
  CHECK(d.staypoint.dist_threshold_m == 200.0);
  CHECK(d.staypoint.time_threshold_s == 1200.0);
  CHECK_FALSE(d.parallel);

  const PipelineConfig t = pipeline_config_from_json(kTinyConfig, "/base");
  CHECK(t.model.stl == StlConfig::for_period(4));
  CHECK(t.seed == 11);
  CHECK(pipeline_config_from_json(to_json(t)).model == t.model);

  CHECK_THROWS_AS(pipeline_config_from_json(json{{"gird", 1}}), Error);
  CHECK_THROWS_AS(pipeline_config_from_json(json{{"tcn", {{"hiden", 3}}}}), Error);
  CHECK_THROWS_AS(pipeline_config_from_json(json{{"grid", {{"cells_x", 0}}}}), Error);
  CHECK_THROWS_AS(pipeline_config_from_json(json{{"split", "x"}}), Error);
  CHECK(pipeline_config_from_json(json{{"partition_file", "p.json"}}, "/base").partition_file == fs::path("/base/p.json"));
}

TEST_CASE("train, eval and predict agree") {
  const fs::path dir = scratch("train");
  const auto data = tiny_data();
  write_dataset_file(dir / "data.jsonl", data);
  const PipelineConfig cfg = pipeline_config_from_json(kTinyConfig);
  cmd_train(dir / "data.jsonl", cfg, dir / "run1");
  cmd_train(dir / "data.jsonl", cfg, dir / "run2");
  CHECK(read_file(dir / "run1" / "model.ckpt") == read_file(dir / "run2" / "model.ckpt"));
  CHECK(read_file(dir / "run1" / "train_log.jsonl") == read_file(dir / "run2" / "train_log.jsonl"));
  const auto log = read_jsonl(dir / "run1" / "train_log.jsonl");
  CHECK(log.size() == 3);
  CHECK(log[0].contains("alpha"));

  const json report = cmd_eval(dir / "data.jsonl", dir / "run1", std::nullopt);
  CHECK(report.at("acc").is_number());
  CHECK(report.at("macro_f1").is_number());
  CHECK(report.at("per_class").contains("walk"));
  CHECK(report.at("counts").at("evaluated") == 20);

  cmd_predict(dir / "data.jsonl", dir / "run1" / "model.ckpt", std::nullopt, dir / "pred.jsonl");
  const auto preds = read_jsonl(dir / "pred.jsonl");
  REQUIRE(preds.size() == data.size());
  for (std::size_t i = 1; i < preds.size(); ++i)
    CHECK(preds[i - 1].at("traj_id").get<std::string>() < preds[i].at("traj_id").get<std::string>());

  // Offline scoring of predict's output reproduces eval's report.
  std::map<std::string, int> truth;
  for (const auto& t : data) truth[t.traj_id] = t.mode->index;
  std::vector<int> tv, pv;
  const LabelMap labels = testing::synthetic_labels();
  for (const auto& p : preds) {
    tv.push_back(truth.at(p.at("traj_id").get<std::string>()));
    pv.push_back(labels.lookup(p.at("mode").get<std::string>())->index);
  }
  const MetricsReport offline = macro_metrics(confusion(tv, pv, 2));
  CHECK(offline.acc == report.at("acc").get<double>());
  CHECK(offline.macro_f1 == report.at("macro_f1").get<double>());

  cmd_predict(dir / "data.jsonl", dir / "run1", std::nullopt, dir / "pred2.jsonl");
  CHECK(read_file(dir / "pred.jsonl") == read_file(dir / "pred2.jsonl"));

  write_dataset_file(dir / "empty.jsonl", {});
  cmd_predict(dir / "empty.jsonl", dir / "run1", std::nullopt, dir / "empty_pred.jsonl");
  CHECK(read_file(dir / "empty_pred.jsonl").empty());

  SUBCASE("a conflicting preprocessing config is a mismatch") {
    json other = kTinyConfig;
    other["grid"]["cells_x"] = 7;
    try {
      cmd_eval(dir / "data.jsonl", dir / "run1", pipeline_config_from_json(other));
      FAIL("expected a mismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Mismatch);
    }
    CHECK_NOTHROW(cmd_eval(dir / "data.jsonl", dir / "run1", cfg));
  }
}

TEST_CASE("partitioned train, eval and predict") {
  const fs::path dir = scratch("partitioned");
  std::vector<Trajectory> data = tiny_data(6, 10.0, 10.0);
  for (auto& t : tiny_data(6, 20.0, 20.0)) {
    t.traj_id = "q" + t.traj_id;
    data.push_back(t);
  }
  std::vector<Trajectory> walk_only;
  testing::SyntheticOptions opt;
  opt.points = 40;
  opt.center_lat = 30;
  opt.center_lon = 30;
  opt.spread_deg = 0.01;
  for (int i = 0; i < 3; ++i) walk_only.push_back(testing::synthetic_walk("r" + std::to_string(i), opt, 50 + i));
  data.insert(data.end(), walk_only.begin(), walk_only.end());
  write_dataset_file(dir / "data.jsonl", data);
  write_dataset_file(dir / "walk_only.jsonl", walk_only);

  const json parts = {{"partitions",
                       {{{"name", "P"}, {"polygon", {{9, 9}, {9, 11}, {11, 11}, {11, 9}}}},
                        {{"name", "Q"}, {"polygon", {{19, 19}, {19, 21}, {21, 21}, {21, 19}}}},
                        {{"name", "R"}, {"polygon", {{29, 29}, {29, 31}, {31, 31}, {31, 29}}}}}}};
  std::ofstream(dir / "parts.json") << parts.dump();
  json cj = kTinyConfig;
  cj["partition_file"] = "parts.json";
  cj["parallel"] = true;
  std::ofstream(dir / "cfg.json") << cj.dump();
  const PipelineConfig cfg = load_pipeline_config(dir / "cfg.json");
  cmd_train(dir / "data.jsonl", cfg, dir / "out");

  const json manifest = json::parse(read_file(dir / "out" / "manifest.json"));
  REQUIRE(manifest.at("models").size() == 4);
  CHECK(manifest.at("models")[0].at("checkpoint") == "P.ckpt");
  CHECK(manifest.at("models")[2].at("checkpoint").is_null());
  CHECK(fs::exists(dir / "out" / "P.ckpt"));
  CHECK(fs::exists(dir / "out" / "Q.ckpt"));
  CHECK_FALSE(fs::exists(dir / "out" / "R.ckpt"));

  const json report = cmd_eval(dir / "data.jsonl", dir / "out", std::nullopt);
  CHECK(report.at("counts").at("evaluated") == 24);
  CHECK(report.at("counts").at("unclassified") == 3);

  cmd_predict(dir / "data.jsonl", dir / "out" / "manifest.json", std::nullopt, dir / "pred.jsonl");
  const auto preds = read_jsonl(dir / "pred.jsonl");
  CHECK(preds.size() == data.size());
  int nulls = 0;
  for (const auto& p : preds) nulls += p.at("mode").is_null();
  CHECK(nulls == 3);

  try {
    cmd_eval(dir / "walk_only.jsonl", dir / "out", std::nullopt);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}

TEST_CASE("decompose writes the STL components") {
  const fs::path dir = scratch("decompose");
  auto data = tiny_data(2);
  write_dataset_file(dir / "data.jsonl", data);
  const PipelineConfig cfg = pipeline_config_from_json(kTinyConfig);
  cmd_decompose(dir / "data.jsonl", data[1].traj_id, cfg, dir / "d.csv");
  std::istringstream in(read_file(dir / "d.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "v,y,trend,seasonal,residual");
  int rows = 0;
  while (std::getline(in, line)) {
    double v, y, tr, se, re;
    char c;
    std::istringstream row(line);
    row >> v >> c >> y >> c >> tr >> c >> se >> c >> re;
    CHECK(v == rows);
    CHECK((tr + se) + re == y);
    ++rows;
  }
  CHECK(rows == 40);
  CHECK_THROWS_AS(cmd_decompose(dir / "data.jsonl", "nope", cfg, dir / "x.csv"), Error);
  json long_period = kTinyConfig;
  long_period["stl"] = {{"period", 30}};
  try {
    cmd_decompose(dir / "data.jsonl", data[1].traj_id, pipeline_config_from_json(long_period), dir / "x.csv");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("60") != std::string::npos);
  }
}

TEST_CASE("command line exit codes and error categories") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli("eval " + (dir / "missing.jsonl").string() + " " + (dir / "m.ckpt").string(), dir / "err.txt") == 1);
  CHECK(read_file(dir / "err.txt").rfind("error: io: ", 0) == 0);
  std::ofstream(dir / "bad.json") << R"({"unknown": 1})";
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " decompose a b -o c", dir / "err2.txt") == 1);
  CHECK(read_file(dir / "err2.txt").rfind("error: config: ", 0) == 0);
  CHECK(run_cli("frobnicate", dir / "err3.txt") != 0);

  write_dataset_file(dir / "data.jsonl", tiny_data(2));
  std::ofstream(dir / "cfg.json") << kTinyConfig.dump();
  CHECK(run_cli("--config " + (dir / "cfg.json").string() + " decompose " + (dir / "data.jsonl").string() +
                    " w0000 -o " + (dir / "d.csv").string(),
                dir / "err4.txt") == 0);
  CHECK(fs::exists(dir / "d.csv"));
}

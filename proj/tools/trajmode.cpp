#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "trajmode/config.hpp"
#include "trajmode/error.hpp"
#include "trajmode/pipeline.hpp"

namespace fs = std::filesystem;
using namespace trajmode;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<bool> parallel;
  std::string partitions;
};

// flag > file > default
PipelineConfig resolve(const GlobalFlags& flags) {
  PipelineConfig cfg = flags.config.empty() ? PipelineConfig{} : load_pipeline_config(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.parallel) cfg.parallel = *flags.parallel;
  if (!flags.partitions.empty()) cfg.partition_file = flags.partitions;
  return cfg;
}

std::optional<PipelineConfig> user_config(const GlobalFlags& flags) {
  if (flags.config.empty() && flags.partitions.empty()) return std::nullopt;
  return resolve(flags);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transportation-mode classification of GPS trajectories"};
  app.require_subcommand(1);

  GlobalFlags flags;
  app.add_option("--config", flags.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "Override the config seed");
  app.add_option("--parallel", flags.parallel, "Train partitions concurrently (true/false)");
  app.add_option("--partitions", flags.partitions, "Partition polygons JSON")->check(CLI::ExistingFile);

  std::string geolife_dir, dataset, model, out, traj_id;

  auto* ingest = app.add_subcommand("ingest", "GeoLife tree to a labeled segment dataset");
  ingest->add_option("geolife_dir", geolife_dir, "Directory holding Data/")->required();
  ingest->add_option("-o,--out", out, "Output dataset (JSON Lines)")->required();

  auto* train = app.add_subcommand("train", "Train a model or one model per partition");
  train->add_option("dataset", dataset, "Dataset (JSON Lines)")->required();
  train->add_option("-o,--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Score a labeled dataset");
  eval->add_option("dataset", dataset, "Dataset (JSON Lines)")->required();
  eval->add_option("model", model, "Checkpoint, manifest.json, or training output directory")->required();
  eval->add_option("-o,--out", out, "Report path (default stdout)");

  auto* predict = app.add_subcommand("predict", "Label trajectories");
  predict->add_option("dataset", dataset, "Dataset (JSON Lines)")->required();
  predict->add_option("model", model, "Checkpoint, manifest.json, or training output directory")->required();
  predict->add_option("-o,--out", out, "Output predictions (JSON Lines)")->required();

  auto* decompose = app.add_subcommand("decompose", "STL components of one trajectory's timestamps");
  decompose->add_option("dataset", dataset, "Dataset (JSON Lines)")->required();
  decompose->add_option("traj_id", traj_id, "Trajectory id")->required();
  decompose->add_option("-o,--out", out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*ingest) {
      const IngestStats s = cmd_ingest(geolife_dir, resolve(flags), out);
      std::cout << "users " << s.users << " (without labels " << s.users_without_labels << "), files " << s.files
                << ", segments " << s.segments << '\n';
      for (const auto& [mode, n] : s.segments_per_mode) std::cout << "  " << mode << ' ' << n << '\n';
    } else if (*train) {
      cmd_train(dataset, resolve(flags), out);
    } else if (*eval) {
      const std::string report = cmd_eval(dataset, model, user_config(flags)).dump(2) + "\n";
      if (out.empty()) {
        std::cout << report;
      } else {
        std::ofstream f(out, std::ios::binary);
        if (!f || !(f << report)) throw Error(ErrorKind::Io, "cannot write '" + out + "'");
      }
    } else if (*predict) {
      cmd_predict(dataset, model, user_config(flags), out);
    } else if (*decompose) {
      cmd_decompose(dataset, traj_id, resolve(flags), out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

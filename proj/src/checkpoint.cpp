#include "trajmode/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "trajmode/error.hpp"

namespace trajmode {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON echo

json to_json(const ModelConfig& cfg) {
  json j;
  j["grid"] = {{"cells_x", cfg.grid.cells_x}, {"cells_y", cfg.grid.cells_y}};
  j["cnn"] = {{"channels", cfg.cnn.channels}};
  j["tcn"] = {{"in_channels", cfg.tcn.in_channels}, {"hidden_units", cfg.tcn.hidden_units},
              {"kernel", cfg.tcn.kernel},           {"dilation_base", cfg.tcn.dilation_base},
              {"levels", cfg.tcn.levels},           {"dropout", cfg.tcn.dropout},
              {"seq_len", cfg.tcn.seq_len}};
  j["stl"] = {{"period", cfg.stl.period},
              {"inner_iterations", cfg.stl.inner_iterations},
              {"seasonal_span", cfg.stl.seasonal_span},
              {"trend_span", cfg.stl.trend_span},
              {"lowpass_span", cfg.stl.lowpass_span}};
  j["inject_weight"] = cfg.inject_weight;
  j["train"] = {{"lr", cfg.train.lr},
                {"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"split", cfg.train.split}};
  j["labels"] = {{"classes", cfg.labels.classes()}, {"aliases", cfg.labels.aliases()}};
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.grid.cells_x = j.at("grid").at("cells_x").get<int>();
  cfg.grid.cells_y = j.at("grid").at("cells_y").get<int>();
  cfg.cnn.channels = j.at("cnn").at("channels").get<std::vector<int>>();
  const json& t = j.at("tcn");
  cfg.tcn.in_channels = t.at("in_channels").get<int>();
  cfg.tcn.hidden_units = t.at("hidden_units").get<int>();
  cfg.tcn.kernel = t.at("kernel").get<int>();
  cfg.tcn.dilation_base = t.at("dilation_base").get<int>();
  cfg.tcn.levels = t.at("levels").get<int>();
  cfg.tcn.dropout = t.at("dropout").get<double>();
  cfg.tcn.seq_len = t.at("seq_len").get<int>();
  const json& s = j.at("stl");
  cfg.stl.period = s.at("period").get<int>();
  cfg.stl.inner_iterations = s.at("inner_iterations").get<int>();
  cfg.stl.seasonal_span = s.at("seasonal_span").get<int>();
  cfg.stl.trend_span = s.at("trend_span").get<int>();
  cfg.stl.lowpass_span = s.at("lowpass_span").get<int>();
  cfg.inject_weight = j.at("inject_weight").get<double>();
  const json& tr = j.at("train");
  cfg.train.lr = tr.at("lr").get<double>();
  cfg.train.batch_size = tr.at("batch_size").get<int>();
  cfg.train.epochs = tr.at("epochs").get<int>();
  cfg.train.split = tr.at("split").get<double>();
  cfg.labels = LabelMap(j.at("labels").at("classes").get<std::vector<std::string>>(),
                        j.at("labels").at("aliases").get<std::map<std::string, std::string>>());
  validate(cfg);
  return cfg;
}

json model_header_to_json(const Model<float>& model) {
  json j;
  j["model"] = to_json(model.config);
  j["normalization"] = {{"image_min", model.norm.image.min},
                        {"image_max", model.norm.image.max},
                        {"sequence_mean", model.norm.sequence.mean},
                        {"sequence_std", model.norm.sequence.stddev}};
  j["fusion"] = {{"r1", model.fusion.r1}, {"r2", model.fusion.r2}, {"alpha", model.fusion.alpha},
                 {"beta", model.fusion.beta}};
  return j;
}

void model_header_from_json(const json& j, Model<float>& model) {
  model.config = model_config_from_json(j.at("model"));
  const json& n = j.at("normalization");
  model.norm.image.min = n.at("image_min").get<std::array<double, 3>>();
  model.norm.image.max = n.at("image_max").get<std::array<double, 3>>();
  model.norm.sequence.mean = n.at("sequence_mean").get<std::array<double, 3>>();
  model.norm.sequence.stddev = n.at("sequence_std").get<std::array<double, 3>>();
  const json& f = j.at("fusion");
  model.fusion.r1 = f.at("r1").get<double>();
  model.fusion.r2 = f.at("r2").get<double>();
  model.fusion.alpha = f.at("alpha").get<double>();
  model.fusion.beta = f.at("beta").get<double>();
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw Error(ErrorKind::Checkpoint, "checkpoint truncated");
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_string(std::istream& in, std::uint32_t max_len) {
  const std::uint32_t len = get_u32(in);
  if (len > max_len) throw Error(ErrorKind::Checkpoint, "checkpoint string length implausible");
  std::string s(len, '\0');
  read_exact(in, s.data(), len);
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model<float>& model) {
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string header = model_header_to_json(model).dump();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  const auto names = model.params.sorted_names();
  put_u32(out, static_cast<std::uint32_t>(names.size()));
  for (const auto& name : names) {
    const Tensor<float>& value = model.params.get(name).value();
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(value.rank()));
    for (Index d : value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : value.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing checkpoint");
}

Model<float> load_checkpoint(std::istream& in) {
  char magic[4];
  read_exact(in, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error(ErrorKind::Checkpoint, "bad checkpoint magic");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::Checkpoint, "unsupported checkpoint version " + std::to_string(version));

  Model<float> header_only;
  try {
    model_header_from_json(json::parse(get_string(in, 1u << 26)), header_only);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::Checkpoint, std::string("bad checkpoint config: ") + e.what());
  }

  // Template with the expected names and shapes; every one must be supplied.
  Model<float> model = Model<float>::create(header_only.config, 0);
  model.norm = header_only.norm;
  model.fusion = header_only.fusion;

  std::map<std::string, Tensor<float>> loaded;
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in, 4096);
    const std::uint32_t rank = get_u32(in);
    if (rank > 8) throw Error(ErrorKind::Checkpoint, "parameter '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(get_u32(in));
    if (!model.params.contains(name)) throw Error(ErrorKind::Checkpoint, "unexpected parameter '" + name + "'");
    if (model.params.get(name).shape() != shape)
      throw Error(ErrorKind::Checkpoint, "parameter '" + name + "' has shape " + to_string(shape) + ", expected " +
                                             to_string(model.params.get(name).shape()));
    Tensor<float> value(shape);
    for (Index j = 0; j < value.size(); ++j) value[j] = std::bit_cast<float>(get_u32(in));
    loaded.emplace(std::move(name), std::move(value));
  }
  for (auto& p : model.params.items()) {
    auto it = loaded.find(p.name);
    if (it == loaded.end()) throw Error(ErrorKind::Checkpoint, "missing parameter '" + p.name + "'");
    p.var.mutable_value() = std::move(it->second);
  }
  return model;
}

void save_checkpoint_file(const std::filesystem::path& path, const Model<float>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  save_checkpoint(out, model);
}

Model<float> load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  return load_checkpoint(in);
}

std::string checkpoint_bytes(const Model<float>& model) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(out, model);
  return out.str();
}

}  // namespace trajmode

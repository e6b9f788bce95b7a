#include "vscam/vig_config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "vscam/errors.hpp"

namespace vscam {

namespace {

template <typename E>
E parse_enum(const nlohmann::json& j, const char* key,
             std::initializer_list<std::pair<std::string_view, E>> options) {
  if (!j.is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
  const auto s = j.get<std::string>();
  for (const auto& [name, value] : options)
    if (name == s) return value;
  throw ConfigError(std::string("config key '") + key + "' has unknown value '" + s + "'");
}

std::string_view to_string(DegreeNorm n) {
  return n == DegreeNorm::inverse_sqrt ? "inverse_sqrt" : "literal_sqrt";
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }
std::string_view to_string(Aggregator a) {
  return a == Aggregator::max_relative ? "max_relative" : "mean";
}
std::string_view to_string(CapturePoint c) {
  return c == CapturePoint::grapher ? "grapher" : "ffn";
}

std::size_t ViGConfig::total_blocks() const noexcept {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.block_count;
  return n;
}

void ViGConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid ViG config: " + msg); };
  if (stages.empty()) fail("no stages");
  if (stem_channels.size() != 3) fail("stem_channels must list exactly 3 convolutions");
  for (std::size_t c : stem_channels)
    if (c == 0) fail("stem channel count of 0");
  if (stem_channels.back() != stages.front().channel_dim) {
    fail("last stem channel count " + std::to_string(stem_channels.back()) +
         " differs from first stage dim " + std::to_string(stages.front().channel_dim));
  }
  if (patch_grid == 0 || stages.front().spatial_side != patch_grid) {
    fail("first stage side must equal patch_grid " + std::to_string(patch_grid));
  }
  if (n_heads == 0) fail("n_heads must be positive");
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (ffn_ratio == 0) fail("ffn_ratio must be positive");
  if (k_neighbors == 0) fail("k_neighbors must be positive");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::string tag = "stage " + std::to_string(s) + ": ";
    if (st.block_count == 0) fail(tag + "block_count must be positive");
    if (st.channel_dim == 0 || st.channel_dim % n_heads != 0) {
      fail(tag + "channel_dim " + std::to_string(st.channel_dim) + " not divisible by n_heads " +
           std::to_string(n_heads));
    }
    if (st.spatial_side * st.spatial_side < k_neighbors + 1) {
      fail(tag + "too few vertices for K=" + std::to_string(k_neighbors));
    }
    if (s > 0 && stages[s - 1].spatial_side != 2 * st.spatial_side) {
      fail(tag + "spatial side must halve from the previous stage");
    }
  }
}

ViGConfig ViGConfig::desk() { return ViGConfig{}; }

ViGConfig ViGConfig::vig_ti(std::size_t n_classes) {
  ViGConfig c;
  c.stages = {{2, 48, 56}, {2, 96, 28}, {6, 240, 14}, {2, 384, 7}};
  c.k_neighbors = 9;
  c.n_heads = 4;
  c.n_classes = n_classes;
  c.stem_channels = {24, 48, 48};
  c.patch_grid = 56;
  return c;
}

void to_json(nlohmann::json& j, const ViGConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) {
    stages.push_back({{"block_count", s.block_count},
                      {"channel_dim", s.channel_dim},
                      {"spatial_side", s.spatial_side}});
  }
  j = nlohmann::json{{"stages", stages},
                     {"k_neighbors", c.k_neighbors},
                     {"n_heads", c.n_heads},
                     {"n_classes", c.n_classes},
                     {"activation", to_string(c.activation)},
                     {"stem_channels", c.stem_channels},
                     {"patch_grid", c.patch_grid},
                     {"ffn_ratio", c.ffn_ratio},
                     {"grapher_residual", c.grapher_residual},
                     {"dynamic_graph", c.dynamic_graph},
                     {"positional_embedding", c.positional_embedding},
                     {"aggregator", to_string(c.aggregator)},
                     {"degree_norm", to_string(c.degree_norm)},
                     {"capture_point", to_string(c.capture_point)}};
}

void from_json(const nlohmann::json& j, ViGConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{
      "stages",   "k_neighbors",      "n_heads",       "n_classes",
      "activation", "stem_channels",  "patch_grid",    "ffn_ratio",
      "grapher_residual", "dynamic_graph", "positional_embedding", "aggregator",
      "degree_norm", "capture_point"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  c = ViGConfig{};
  try {
    if (j.contains("stages")) {
      c.stages.clear();
      for (const auto& s : j.at("stages")) {
        StageConfig st;
        st.block_count = s.at("block_count").get<std::size_t>();
        st.channel_dim = s.at("channel_dim").get<std::size_t>();
        st.spatial_side = s.at("spatial_side").get<std::size_t>();
        c.stages.push_back(st);
      }
    }
    if (j.contains("k_neighbors")) c.k_neighbors = j.at("k_neighbors").get<std::size_t>();
    if (j.contains("n_heads")) c.n_heads = j.at("n_heads").get<std::size_t>();
    if (j.contains("n_classes")) c.n_classes = j.at("n_classes").get<std::size_t>();
    if (j.contains("stem_channels"))
      c.stem_channels = j.at("stem_channels").get<std::vector<std::size_t>>();
    if (j.contains("patch_grid")) c.patch_grid = j.at("patch_grid").get<std::size_t>();
    if (j.contains("ffn_ratio")) c.ffn_ratio = j.at("ffn_ratio").get<std::size_t>();
    if (j.contains("grapher_residual")) c.grapher_residual = j.at("grapher_residual").get<bool>();
    if (j.contains("dynamic_graph")) c.dynamic_graph = j.at("dynamic_graph").get<bool>();
    if (j.contains("positional_embedding"))
      c.positional_embedding = j.at("positional_embedding").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  if (j.contains("activation")) {
    c.activation = parse_enum<Activation>(j.at("activation"), "activation",
                                          {{"relu", Activation::relu}, {"gelu", Activation::gelu}});
  }
  if (j.contains("aggregator")) {
    c.aggregator = parse_enum<Aggregator>(
        j.at("aggregator"), "aggregator",
        {{"max_relative", Aggregator::max_relative}, {"mean", Aggregator::mean}});
  }
  if (j.contains("degree_norm")) {
    c.degree_norm = parse_enum<DegreeNorm>(
        j.at("degree_norm"), "degree_norm",
        {{"inverse_sqrt", DegreeNorm::inverse_sqrt}, {"literal_sqrt", DegreeNorm::literal_sqrt}});
  }
  if (j.contains("capture_point")) {
    c.capture_point = parse_enum<CapturePoint>(
        j.at("capture_point"), "capture_point",
        {{"grapher", CapturePoint::grapher}, {"ffn", CapturePoint::ffn}});
  }
  c.validate();
}

ViGConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return j.get<ViGConfig>();
}

void save_config(const ViGConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write config file " + path.string());
  out << nlohmann::json(config).dump(2) << '\n';
}

}  // namespace vscam

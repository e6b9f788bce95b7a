#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vscam/cam.hpp"
#include "vscam/errors.hpp"
#include "vscam/eval.hpp"
#include "vscam/ops.hpp"
#include "vscam/png_io.hpp"
#include "vscam/render.hpp"
#include "vscam/synth.hpp"
#include "vscam/trainer.hpp"
#include "vscam/weights_io.hpp"

namespace vscam::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Bad flags or arguments detected before any work starts.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string model;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
};

struct ExplainArgs {
  std::string image;
  long long class_index = -1;
  std::string method = "vscam";
  long long layer = -1;
  std::string measure = "inner";
  std::string top_k = "all";
  std::string score_mode = "logit";
  bool relu = false;
};

struct ProbeArgs {
  std::string image;
  long long layer = -1;
  std::string measure = "all";
  std::size_t cell = 1;
};

struct TopologyArgs {
  std::string image;
  std::vector<std::string> vertices;
  std::vector<long long> layers;
  std::string measure = "inner";
  long long class_index = -1;
};

struct EvaluateArgs {
  std::string data;
  std::vector<std::string> methods{"vscam", "gradcam"};
  long long layer = -1;
  std::string measure = "inner";
  std::string top_k = "all";
  std::string score_mode = "logit";
  std::string metric_mode = "softmax";
};

struct TrainArgs {
  std::string data;
  std::size_t epochs = 30;
  double lr = TrainOptions{}.lr;
  std::size_t batch = TrainOptions{}.batch_size;
  bool constant_lr = false;
  bool augment = false;
};

struct SynthArgs {
  std::size_t n = 400;
  std::size_t side = 32;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("--") + what + " is required");
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

ViGConfig load_config_arg(const Common& c) {
  if (c.config.empty()) return ViGConfig::desk();
  require_file(c.config, "config");
  return load_config(c.config);
}

ViGModel load_model(const Common& c) {
  const ViGConfig config = load_config_arg(c);
  require_file(c.model, "model");
  return load_weights(config, c.model);
}

fs::path out_dir(const Common& c) {
  if (c.out.empty()) throw UsageError("--out is required");
  fs::create_directories(c.out);
  return c.out;
}

Tensor load_image(const std::string& path, const ViGModel& model) {
  require_file(path, "image");
  Tensor img = image_to_tensor(read_png(path, 3));
  const std::size_t side = model.config().input_side();
  if (img.dim(1) != side || img.dim(2) != side) {
    throw UsageError("image " + path + " is " + std::to_string(img.dim(2)) + "x" +
                     std::to_string(img.dim(1)) + ", the model expects " + std::to_string(side) +
                     "x" + std::to_string(side));
  }
  return img;
}

std::size_t layer_arg(long long layer, const ViGModel& model) {
  const std::size_t blocks = model.config().total_blocks();
  if (layer < 0) return blocks - 1;
  if (static_cast<std::size_t>(layer) >= blocks) {
    throw UsageError("--layer " + std::to_string(layer) + " out of range; the model has " +
                     std::to_string(blocks) + " blocks (0.." + std::to_string(blocks - 1) + ")");
  }
  return static_cast<std::size_t>(layer);
}

std::size_t class_arg(long long c, const ViGModel& model, const Tensor& image) {
  if (c < 0) return predict_class(model, image);
  if (static_cast<std::size_t>(c) >= model.config().n_classes) {
    throw UsageError("--class " + std::to_string(c) + " out of range for " +
                     std::to_string(model.config().n_classes) + " classes");
  }
  return static_cast<std::size_t>(c);
}

std::optional<std::size_t> top_k_arg(const std::string& s) {
  if (s == "all") return std::nullopt;
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || v == 0 || s.front() == '-') {
    throw UsageError("--top-k expects a positive integer or 'all', got '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

const std::vector<std::string> kMeasures{"euclidean", "angle", "projection", "inner"};

ExplainOptions explain_options(const std::string& method, std::size_t layer,
                               const std::string& measure, const std::string& top_k,
                               const std::string& score_mode, bool relu, std::size_t vertices) {
  ExplainOptions o;
  o.method = parse_cam_method(method);
  o.layer = layer;
  o.measure = parse_similarity(measure);
  o.top_k = top_k_arg(top_k);
  if (o.top_k && *o.top_k > vertices) {
    throw UsageError("--top-k " + top_k + " exceeds the " + std::to_string(vertices) +
                     " vertices of the layer");
  }
  o.score_mode = parse_score_mode(score_mode);
  o.relu = relu;
  return o;
}

std::size_t layer_side(const ViGModel& model, std::size_t layer) {
  std::size_t seen = 0;
  for (const StageConfig& s : model.config().stages) {
    if (layer < seen + s.block_count) return s.spatial_side;
    seen += s.block_count;
  }
  return 0;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

int cmd_train(const Common& c, const TrainArgs& a, std::ostream& out) {
  if (a.data.empty()) throw UsageError("--data is required");
  if (!fs::is_directory(a.data)) throw UsageError("dataset directory not found: " + a.data);
  if (c.out.empty()) throw UsageError("--out (weight file) is required");
  if (a.batch == 0) throw UsageError("--batch must be positive");
  if (!(a.lr >= 0.0)) throw UsageError("--lr must be non-negative");
  const ViGConfig config = load_config_arg(c);
  const auto items = read_dataset(a.data);
  if (items.empty()) throw UsageError("dataset " + a.data + " has no images");
  std::vector<LabeledImage> data;
  for (const auto& it : items) {
    if (it.label >= config.n_classes) {
      throw UsageError(it.filename + ": label " + std::to_string(it.label) + " outside the " +
                       std::to_string(config.n_classes) + " classes of the config");
    }
    if (it.image.dim(1) != config.input_side() || it.image.dim(2) != config.input_side()) {
      throw UsageError(it.filename + " does not match the model input side " +
                       std::to_string(config.input_side()));
    }
    data.push_back({it.image, it.label});
  }
  ViGModel model = init_random(config, c.seed);
  TrainOptions o;
  o.epochs = a.epochs;
  o.lr = a.lr;
  o.batch_size = a.batch;
  o.seed = c.seed;
  o.cosine_decay = !a.constant_lr;
  o.augment = a.augment;
  train(model, data, o, [&](const EpochStats& e) {
    out << "epoch " << e.epoch << " loss " << e.loss << " acc " << e.accuracy << std::endl;
  });
  if (a.epochs == 0) out << "untrained acc " << accuracy(model, data) << '\n';
  const fs::path target(c.out);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  save_weights(model, target);
  out << "wrote " << target.string() << '\n';
  return kExitOk;
}

int cmd_explain(const Common& c, const ExplainArgs& a, std::ostream& out) {
  const ViGModel model = load_model(c);
  const Tensor image = load_image(a.image, model);
  const std::size_t layer = layer_arg(a.layer, model);
  const std::size_t side = layer_side(model, layer);
  const ExplainOptions o = explain_options(a.method, layer, a.measure, a.top_k, a.score_mode,
                                           a.relu, side * side);
  const std::size_t cls = class_arg(a.class_index, model, image);
  const fs::path dir = out_dir(c);

  const Explanation e = explain(model, image, cls, o);
  write_png(dir / "heatmap.png", render_gray(e.heatmap));
  write_png(dir / "overlay.png", render_overlay(e.heatmap, image));
  write_png(dir / "explanation.png", tensor_to_image(explanation_map(e.heatmap, image)));
  const Tensor probs = ops::softmax(predict_logits(model, image));
  json meta{{"class", cls},
            {"predicted", predict_class(model, image)},
            {"score", e.score},
            {"probability", probs[cls]},
            {"method", a.method},
            {"layer", layer},
            {"measure", a.measure},
            {"top_k", o.top_k ? json(*o.top_k) : json("all")},
            {"score_mode", a.score_mode},
            {"relu", a.relu},
            {"image", a.image},
            {"model", c.model}};
  write_json(dir / "meta.json", meta);
  out << "class " << cls << " score " << e.score << " -> " << dir.string() << '\n';
  return kExitOk;
}

int cmd_probe(const Common& c, const ProbeArgs& a, std::ostream& out) {
  const ViGModel model = load_model(c);
  const Tensor image = load_image(a.image, model);
  const std::size_t layer = layer_arg(a.layer, model);
  std::vector<Similarity> measures;
  if (a.measure == "all") {
    measures.assign(std::begin(kAllSimilarities), std::end(kAllSimilarities));
  } else {
    measures.push_back(parse_similarity(a.measure));
  }
  if (a.cell == 0) throw UsageError("--cell must be positive");
  const fs::path dir = out_dir(c);
  const ScoredLayers scored = score_layers(model, image, predict_class(model, image));
  const Tensor& features = scored.layers[layer].features;
  for (Similarity m : measures) {
    const ProbeMapSet probes = compute_probe_maps(features, m);
    const fs::path file = dir / ("probe_" + std::string(to_string(m)) + ".png");
    write_png(file, render_probe_grid(probes, a.cell));
    out << to_string(m) << ' ' << probes.count() << " maps of " << probes.rows << "x"
        << probes.cols << " -> " << file.string() << '\n';
  }
  return kExitOk;
}

std::pair<std::size_t, std::size_t> parse_vertex(const std::string& s, std::size_t reference) {
  const auto comma = s.find(',');
  std::size_t r = 0, col = 0;
  bool ok = comma != std::string::npos;
  if (ok) {
    try {
      std::size_t u1 = 0, u2 = 0;
      const std::string a = s.substr(0, comma), b = s.substr(comma + 1);
      r = std::stoul(a, &u1);
      col = std::stoul(b, &u2);
      ok = u1 == a.size() && u2 == b.size() && a.front() != '-' && b.front() != '-';
    } catch (const std::exception&) {
      ok = false;
    }
  }
  if (!ok) throw UsageError("--vertex expects ROW,COL, got '" + s + "'");
  if (r >= reference || col >= reference) {
    throw UsageError("vertex (" + s + ") outside the " + std::to_string(reference) + "x" +
                     std::to_string(reference) + " reference grid");
  }
  return {r, col};
}

int cmd_topology(const Common& c, const TopologyArgs& a, std::ostream& out) {
  const ViGModel model = load_model(c);
  const Tensor image = load_image(a.image, model);
  const std::size_t reference = model.config().stages.back().spatial_side;
  if (a.vertices.empty()) throw UsageError("at least one --vertex is required");
  std::vector<std::pair<std::size_t, std::size_t>> vertices;
  for (const auto& v : a.vertices) vertices.push_back(parse_vertex(v, reference));
  std::vector<std::size_t> layers;
  if (a.layers.empty()) {
    for (std::size_t l = 0; l < model.config().total_blocks(); ++l) layers.push_back(l);
  } else {
    for (long long l : a.layers) layers.push_back(layer_arg(l, model));
  }
  const Similarity measure = parse_similarity(a.measure);
  const std::size_t cls = class_arg(a.class_index, model, image);
  const fs::path dir = out_dir(c);

  const ScoredLayers scored = score_layers(model, image, cls);
  const std::size_t side = image.dim(1);
  const std::vector<Rgb> palette{{255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}};
  std::vector<VertexMark> marks;
  for (std::size_t v = 0; v < vertices.size(); ++v) {
    const auto [r, col] = vertices[v];
    marks.push_back({r, col, palette[v % palette.size()]});
    for (std::size_t l : layers) {
      const Heatmap h = topology_map(scored.layers[l].features, r, col, measure, reference, side, side);
      const fs::path file = dir / ("topology_v" + std::to_string(r) + "_" + std::to_string(col) +
                                   "_layer" + std::to_string(l) + ".png");
      write_png(file, render_overlay(h, image));
      out << "vertex " << r << ',' << col << " layer " << l << " -> " << file.string() << '\n';
    }
  }
  write_png(dir / "vertices.png", annotate_vertices(image, reference, marks));
  return kExitOk;
}

int cmd_evaluate(const Common& c, const EvaluateArgs& a, std::ostream& out) {
  const ViGModel model = load_model(c);
  if (a.data.empty()) throw UsageError("--data is required");
  if (!fs::is_directory(a.data)) throw UsageError("dataset directory not found: " + a.data);
  const std::size_t layer = layer_arg(a.layer, model);
  const std::size_t side = layer_side(model, layer);
  std::vector<EvalOptions> runs;
  for (const auto& m : a.methods) {
    EvalOptions e;
    e.explain = explain_options(m, layer, a.measure, a.top_k, a.score_mode, false, side * side);
    e.metric_mode = parse_score_mode(a.metric_mode);
    runs.push_back(e);
  }
  const auto items = read_dataset(a.data);
  if (items.empty()) throw UsageError("dataset " + a.data + " has no images");
  for (const auto& it : items) {
    if (it.label >= model.config().n_classes) {
      throw UsageError(it.filename + ": label outside the model's classes");
    }
  }
  const fs::path dir = out_dir(c);

  std::vector<MetricsReport> reports;
  for (const EvalOptions& e : runs) {
    MetricsReport r = evaluate_dataset(model, items, e);
    export_report(r, dir / (r.method + "_report.json"));
    write_class_csv(r, dir / (r.method + "_classes.csv"));
    write_image_csv(r, dir / (r.method + "_images.csv"));
    reports.push_back(std::move(r));
  }
  out << std::left << std::setw(10) << "Method" << std::right << std::setw(18)
      << "Confidence drop" << std::setw(18) << "Increase number" << std::setw(14)
      << "Localization" << '\n';
  out << std::fixed << std::setprecision(2);
  for (const MetricsReport& r : reports) {
    out << std::left << std::setw(10) << r.method << std::right << std::setw(17)
        << r.mean_confidence_drop << '%' << std::setw(17) << r.increase_percent << '%';
    if (r.median_localization) {
      out << std::setw(14) << *r.median_localization;
    } else {
      out << std::setw(14) << "-";
    }
    out << '\n';
  }
  out << "images " << items.size() << ", reports in " << dir.string() << '\n';
  return kExitOk;
}

int cmd_synth(const Common& c, const SynthArgs& a, std::ostream& out) {
  if (a.side < 16) throw UsageError("--side must be at least 16, got " + std::to_string(a.side));
  if (c.out.empty()) throw UsageError("--out is required");
  write_dataset(c.out, synth_generate(a.n, a.side, c.seed));
  out << "wrote " << a.n << " images to " << c.out << '\n';
  return kExitOk;
}

void add_common(CLI::App* cmd, Common& c, bool model) {
  if (model) cmd->add_option("--model", c.model, "VSCW weight file")->required();
  cmd->add_option("--config", c.config, "model config JSON (default: desk config)");
  cmd->add_option("--seed", c.seed, "random seed");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Vertex semantic class activation maps for a vision GNN"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "vscam 1.0");

  Common common;
  TrainArgs ta;
  ExplainArgs ea;
  ProbeArgs pa;
  TopologyArgs toa;
  EvaluateArgs eva;
  SynthArgs sa;
  const auto measure_check = CLI::IsMember(kMeasures);
  const auto score_check = CLI::IsMember({"logit", "softmax"});

  auto* train_cmd = app.add_subcommand("train", "train a model on a labeled image folder");
  add_common(train_cmd, common, false);
  train_cmd->add_option("--data", ta.data, "dataset directory with labels.tsv")->required();
  train_cmd->add_option("--out", common.out, "weight file to write")->required();
  train_cmd->add_option("--epochs", ta.epochs, "passes over the data")->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "initial learning rate")->capture_default_str();
  train_cmd->add_option("--batch", ta.batch, "batch size")->capture_default_str();
  train_cmd->add_flag("--constant-lr", ta.constant_lr, "disable cosine decay");
  train_cmd->add_flag("--augment", ta.augment, "random flips and quarter turns");

  auto* explain_cmd = app.add_subcommand("explain", "heatmap for one image");
  add_common(explain_cmd, common, true);
  explain_cmd->add_option("--image", ea.image, "input PNG")->required();
  explain_cmd->add_option("--out", common.out, "output directory")->required();
  explain_cmd->add_option("--class", ea.class_index, "target class (default: predicted)");
  explain_cmd->add_option("--method", ea.method)->check(CLI::IsMember({"vscam", "gradcam"}))->capture_default_str();
  explain_cmd->add_option("--layer", ea.layer, "block index (default: last)");
  explain_cmd->add_option("--measure", ea.measure)->check(measure_check)->capture_default_str();
  explain_cmd->add_option("--top-k", ea.top_k, "probe maps kept, or 'all'")->capture_default_str();
  explain_cmd->add_option("--score-mode", ea.score_mode)->check(score_check)->capture_default_str();
  explain_cmd->add_flag("--relu", ea.relu, "clamp Grad-CAM at zero");

  auto* probe_cmd = app.add_subcommand("probe", "tiled similarity maps of one layer");
  add_common(probe_cmd, common, true);
  probe_cmd->add_option("--image", pa.image, "input PNG")->required();
  probe_cmd->add_option("--out", common.out, "output directory")->required();
  probe_cmd->add_option("--layer", pa.layer, "block index (default: last)");
  std::vector<std::string> probe_measures = kMeasures;
  probe_measures.push_back("all");
  probe_cmd->add_option("--measure", pa.measure)->check(CLI::IsMember(probe_measures))->capture_default_str();
  probe_cmd->add_option("--cell", pa.cell, "pixels per vertex")->capture_default_str();

  auto* topo_cmd = app.add_subcommand("topology", "vertex connection maps across blocks");
  add_common(topo_cmd, common, true);
  topo_cmd->add_option("--image", toa.image, "input PNG")->required();
  topo_cmd->add_option("--out", common.out, "output directory")->required();
  topo_cmd->add_option("--vertex", toa.vertices, "ROW,COL on the last-stage grid (repeatable)")->required();
  topo_cmd->add_option("--layer", toa.layers, "block indices (default: all)");
  topo_cmd->add_option("--measure", toa.measure)->check(measure_check)->capture_default_str();
  topo_cmd->add_option("--class", toa.class_index, "class for the forward pass (default: predicted)");

  auto* eval_cmd = app.add_subcommand("evaluate", "confidence drop and increase number over a dataset");
  add_common(eval_cmd, common, true);
  eval_cmd->add_option("--data", eva.data, "dataset directory with labels.tsv")->required();
  eval_cmd->add_option("--out", common.out, "output directory")->required();
  eval_cmd->add_option("--method", eva.methods, "methods to compare")
      ->delimiter(',')
      ->check(CLI::IsMember({"vscam", "gradcam"}))
      ->capture_default_str();
  eval_cmd->add_option("--layer", eva.layer, "block index (default: last)");
  eval_cmd->add_option("--measure", eva.measure)->check(measure_check)->capture_default_str();
  eval_cmd->add_option("--top-k", eva.top_k, "probe maps kept, or 'all'")->capture_default_str();
  eval_cmd->add_option("--score-mode", eva.score_mode, "score differentiated for the CAM")
      ->check(score_check)
      ->capture_default_str();
  eval_cmd->add_option("--metric-mode", eva.metric_mode, "score used for confidence drop")
      ->check(score_check)
      ->capture_default_str();

  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic shape dataset");
  synth_cmd->add_option("--seed", common.seed, "random seed");
  synth_cmd->add_option("--out", common.out, "output directory")->required();
  synth_cmd->add_option("--n", sa.n, "number of images")->capture_default_str();
  synth_cmd->add_option("--side", sa.side, "image side in pixels (>= 16)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    for (const CLI::App* sub : app.get_subcommands()) err << sub->help();
    if (app.get_subcommands().empty()) err << app.help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(common, ta, out);
    if (explain_cmd->parsed()) return cmd_explain(common, ea, out);
    if (probe_cmd->parsed()) return cmd_probe(common, pa, out);
    if (topo_cmd->parsed()) return cmd_topology(common, toa, out);
    if (eval_cmd->parsed()) return cmd_evaluate(common, eva, out);
    if (synth_cmd->parsed()) return cmd_synth(common, sa, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace vscam::cli

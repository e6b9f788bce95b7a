// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "vscam/cam.hpp"
#include "vscam/eval.hpp"
#include "vscam/graph.hpp"
#include "vscam/synth.hpp"
#include "vscam/trainer.hpp"
#include "vscam/vig_model.hpp"
#include "vscam/weights_io.hpp"

using namespace vscam;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr std::size_t kGradModels = 20;
constexpr std::size_t kGradEntriesPerLayer = 24;
constexpr double kFdStep = 1e-5;
constexpr double kGradRelTol = 1e-6;
// Entries whose true derivative is below this are compared absolutely.
constexpr double kGradFloor = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kOracleInstances = 100;
constexpr double kOracleSeconds = 30.0;
constexpr std::size_t kInvariantTrials = 1000;
constexpr std::size_t kTrainImages = 400;
constexpr std::size_t kTestImages = 100;
constexpr std::uint64_t kTrainDataSeed = 1;
constexpr std::uint64_t kTestDataSeed = 2;
constexpr std::uint64_t kModelSeed = 7;
constexpr double kTrainAccuracy = 0.9;
constexpr double kTrainSeconds = 300.0;
constexpr double kLocalizationMargin = 1.2;
constexpr double kAblationPearson = 0.9;
constexpr std::size_t kRoundTrips = 100;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool same(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && a.vec() == b.vec(); }

Tensor logits_with_override(const ViGModel& model, const Tensor& image, std::size_t block, const Tensor& f) {
  Tape tape(Precision::float64);
  ForwardOptions o;
  o.override_block = std::make_pair(block, f);
  return tape.value(model_forward(model, image, tape, o).logits);
}

// ---------------------------------------------------------------- 1

void gradient_fidelity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t m = 0; m < kGradModels; ++m) {
    const ViGModel model = init_random(ViGConfig::desk(), 1000 + m);
    const Tensor image = oracle::random_tensor(rng, {3, 32, 32}, 0.0, 1.0);
    const std::size_t c = rng() % model.config().n_classes;

    Tape tape(Precision::float64);
    ForwardOptions o;
    o.capture = true;
    auto r = model_forward(model, image, tape, o);
    tape.backward(class_score(tape, r.logits, c, ScoreMode::logit));

    for (std::size_t l = 0; l < r.capture.blocks.size(); ++l) {
      const auto& cap = r.capture.blocks[l];
      const Tensor f = tape.value(cap.var);
      const Tensor g = tape.grad(cap.var);
      for (std::size_t t = 0; t < kGradEntriesPerLayer; ++t) {
        const std::size_t i = rng() % f.numel();
        Tensor plus = f, minus = f;
        plus[i] += kFdStep;
        minus[i] -= kFdStep;
        const double fd =
            (logits_with_override(model, image, l, plus)[c] - logits_with_override(model, image, l, minus)[c]) /
            (2.0 * kFdStep);
        const double err = std::abs(g[i] - fd) / std::max({std::abs(fd), std::abs(g[i]), kGradFloor});
        worst = std::max(worst, err);
        ++checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  report(1, worst < kGradRelTol && secs < kGradSeconds,
         fmt("gradient fidelity: %zu models, %zu entries, max rel err %.3g (< %.0e), %.1f s (< %.0f s)", kGradModels,
             checked, worst, kGradRelTol, secs, kGradSeconds));
}

// ---------------------------------------------------------------- 2

void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::size_t mismatches[7] = {};
  const char* names[7] = {"knn", "aggregate_mean", "max_relative", "probes", "semantic_base", "gradcam", "vscam"};
  for (std::size_t inst = 0; inst < kOracleInstances; ++inst) {
    const std::size_t side = 2 + rng() % 3;  // N = 4, 9, 16
    const std::size_t n = side * side, d = 1 + rng() % 8;
    const std::size_t k = 1 + rng() % (n - 1);
    const Tensor x = oracle::random_tensor(rng, {n, d});

    const Tensor dist = pairwise_distance(x);
    const PatchGraph g = knn_edges(dist, k);
    const auto lists = oracle::knn(dist, k);
    bool knn_ok = true;
    for (std::size_t i = 0; i < n; ++i) {
      const auto nb = g.neighbors(i);
      knn_ok = knn_ok && std::vector<std::size_t>(nb.begin(), nb.end()) == lists[i];
    }
    mismatches[0] += !knn_ok;
    mismatches[1] += !same(aggregate_mean(x, g), oracle::mean_aggregate(oracle::adjacency(lists), x));
    mismatches[2] += !same(aggregate_max_relative(x, g), oracle::max_relative(x, lists));

    const Tensor f = x.reshaped({side, side, d});
    const Tensor grad = oracle::random_tensor(rng, {side, side, d});
    mismatches[3] += !same(compute_probe_maps(f, Similarity::inner).maps, oracle::gram(f));
    mismatches[4] += !same(compute_semantic_base(grad, 0).q, oracle::semantic_base(grad));
    mismatches[5] += !same(gradcam_raw(f, grad), oracle::gradcam(f, grad));
    mismatches[6] += !same(vscam_raw(compute_probe_maps(f, Similarity::inner), compute_semantic_base(grad, 0)),
                           oracle::couple(oracle::gram(f), oracle::semantic_base(grad)));
  }
  const double secs = seconds_since(t0);
  std::ostringstream detail;
  bool ok = secs < kOracleSeconds;
  detail << "oracle equivalence on " << kOracleInstances << " instances (N <= 16, D <= 8), exact;";
  for (std::size_t i = 0; i < 7; ++i) {
    detail << ' ' << names[i] << '=' << (kOracleInstances - mismatches[i]) << '/' << kOracleInstances;
    ok = ok && mismatches[i] == 0;
  }
  detail << fmt(", %.2f s (< %.0f s)", secs, kOracleSeconds);
  report(2, ok, detail.str());
}

// ---------------------------------------------------------------- 3

bool in_unit_range(const Tensor& h) {
  double hi = 0.0;
  for (double v : h.data()) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    hi = std::max(hi, v);
  }
  return hi == 1.0 || hi == 0.0;
}

void structural_invariants() {
  std::mt19937_64 rng(303);
  std::size_t bad[5] = {};
  for (std::size_t t = 0; t < kInvariantTrials; ++t) {
    const std::size_t side = 2 + rng() % 4, d = 1 + rng() % 8, n = side * side;
    const Tensor f = oracle::random_tensor(rng, {side, side, d});
    const Tensor grad = oracle::random_tensor(rng, {side, side, d});

    const auto inner = compute_probe_maps(f, Similarity::inner);
    const auto angle = compute_probe_maps(f, Similarity::angle);
    bool sym = true, self = true;
    for (std::size_t a = 0; a < side; ++a)
      for (std::size_t b = 0; b < side; ++b) {
        self = self && angle.at(a, b, a, b) == 1.0;
        for (std::size_t i = 0; i < side; ++i)
          for (std::size_t j = 0; j < side; ++j) sym = sym && inner.at(a, b, i, j) == inner.at(i, j, a, b);
      }
    bad[0] += !sym;
    bad[1] += !self;

    const std::size_t k = 1 + rng() % (n - 1);
    const PatchGraph g = build_knn_graph(f.reshaped({n, d}), k);
    bool rows = true;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g.adjacency.at(i, j);
      rows = rows && s == static_cast<double>(k) && g.adjacency.at(i, i) == 0.0;
    }
    bad[2] += !rows;

    const auto base = compute_semantic_base(grad, 0);
    const std::size_t out = side * (1 + rng() % 8);
    const Heatmap all = compose_vscam(inner, base, std::nullopt, out, out);
    const Heatmap every = compose_vscam(inner, base, n, out, out);
    const Heatmap some = compose_vscam(inner, base, 1 + rng() % n, out, out);
    const Heatmap gc = gradcam(f, grad, out, out, rng() % 2 == 0);
    bad[3] += !(in_unit_range(all.values) && in_unit_range(some.values) && in_unit_range(gc.values));
    bad[4] += !same(all.values, every.values);
  }
  const std::size_t total = bad[0] + bad[1] + bad[2] + bad[3] + bad[4];
  report(3, total == 0,
         fmt("structural invariants over %zu trials: violations gram=%zu angle=%zu rowsum=%zu range=%zu topk=%zu",
             kInvariantTrials, bad[0], bad[1], bad[2], bad[3], bad[4]));
}

// ---------------------------------------------------------------- 4

void worked_example() {
  const double v = confidence_drop_percent(0.8, 0.2);
  report(4, v == 75.0, fmt("confidence drop 0.8 -> 0.2 = %.17g%% (exactly 75)", v));
}

// ---------------------------------------------------------------- 5 and 7

std::vector<DatasetItem> items_of(const std::vector<SyntheticSample>& s) {
  std::vector<DatasetItem> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({"test_" + std::to_string(i), s[i].image, s[i].label, s[i].mask});
  return out;
}

void end_to_end(ViGModel& model, const std::vector<DatasetItem>& test) {
  const auto train_samples = synth_generate(kTrainImages, 32, kTrainDataSeed);
  std::vector<LabeledImage> train_data;
  for (const auto& s : train_samples) train_data.push_back({s.image, s.label});

  TrainOptions opts;
  opts.seed = kModelSeed;
  const auto t0 = Clock::now();
  double acc = 0.0;
  train(model, train_data, opts, [&](const EpochStats& e) { acc = e.accuracy; });
  const double secs = seconds_since(t0);
  const bool trained = acc >= kTrainAccuracy && secs <= kTrainSeconds;
  std::printf("  training: %zu epochs, train acc %.4f, %.1f s\n", opts.epochs, acc, secs);

  EvalOptions vs, gc;
  vs.explain.method = CamMethod::vscam;
  gc.explain.method = CamMethod::gradcam;
  const MetricsReport rv = evaluate_dataset(model, test, vs);
  const MetricsReport rg = evaluate_dataset(model, test, gc);

  std::vector<double> mask_fraction;
  for (const auto& it : test) mask_fraction.push_back(localization_mass(Tensor(it.mask->shape(), 1.0), *it.mask));
  const double uniform = median(mask_fraction);
  const double loc_v = rv.median_localization.value_or(0.0), loc_g = rg.median_localization.value_or(0.0);

  const bool a = rv.mean_confidence_drop < rg.mean_confidence_drop;
  const bool b = rv.increase_count >= rg.increase_count;
  const bool c = loc_v >= loc_g && loc_v >= kLocalizationMargin * uniform;
  std::printf("  (a) mean confidence drop: vscam %.3f%%, gradcam %.3f%% -> %s\n", rv.mean_confidence_drop,
              rg.mean_confidence_drop, a ? "ok" : "not met");
  std::printf("      clamped mean drop: vscam %.3f%%, gradcam %.3f%%\n", rv.mean_clamped_drop, rg.mean_clamped_drop);
  std::printf("  (b) increase count: vscam %zu, gradcam %zu -> %s\n", rv.increase_count, rg.increase_count,
              b ? "ok" : "not met");
  std::printf("  (c) median localization: vscam %.4f, gradcam %.4f, uniform %.4f (x%.1f = %.4f) -> %s\n", loc_v, loc_g,
              uniform, kLocalizationMargin, kLocalizationMargin * uniform, c ? "ok" : "not met");
  report(5, trained && a && b && c,
         fmt("end-to-end: train acc %.3f in %.0f s; drop vs %.2f / gc %.2f; increases vs %zu / gc %zu; "
             "localization vs %.3f / gc %.3f / uniform %.3f",
             acc, secs, rv.mean_confidence_drop, rg.mean_confidence_drop, rv.increase_count, rg.increase_count, loc_v,
             loc_g, uniform));
}

void ablation(const ViGModel& model, const std::vector<DatasetItem>& test) {
  const std::size_t layer = model.config().total_blocks() - 1;
  const std::size_t side = model.config().stages.back().spatial_side;
  const std::size_t n = side * side;
  const std::size_t k_min = (14 * n + 48) / 49;  // ceil(14 n / 49)
  const std::size_t out = model.config().input_side();

  std::vector<double> mean_r(n + 1, 0.0);
  std::size_t top1_low = 0;
  for (const auto& it : test) {
    const ScoredLayers s = score_layers(model, it.image, it.label);
    const auto probes = compute_probe_maps(s.layers[layer].features, Similarity::inner);
    const auto base = compute_semantic_base(s.layers[layer].gradient, it.label, layer);
    const Tensor full = compose_vscam(probes, base, std::nullopt, out, out).values;
    for (std::size_t k = 1; k <= n; ++k) {
      const double r = oracle::pearson(compose_vscam(probes, base, k, out, out).values, full);
      mean_r[k] += r / static_cast<double>(test.size());
      if (k == 1 && r < kAblationPearson) ++top1_low;
    }
  }
  double worst_high = 1.0;
  for (std::size_t k = k_min; k <= n; ++k) worst_high = std::min(worst_high, mean_r[k]);
  std::printf("  mean Pearson vs all probes by top_k:");
  for (std::size_t k = 1; k <= n; ++k) std::printf(" %zu:%.3f", k, mean_r[k]);
  std::printf("\n");
  const bool ok = worst_high >= kAblationPearson && 2 * top1_low >= test.size();
  report(7, ok,
         fmt("ablation: min mean Pearson for top_k >= %zu of %zu is %.4f (>= %.1f); top_k = 1 below %.1f on %zu/%zu "
             "images (>= half)",
             k_min, n, worst_high, kAblationPearson, kAblationPearson, top1_low, test.size()));
}

// ---------------------------------------------------------------- 6

void shape_ledger() {
  const ViGConfig ti = ViGConfig::vig_ti();
  const ViGModel model = init_random(ti, 0);
  std::mt19937_64 rng(606);
  const Tensor image = oracle::random_tensor(rng, {3, ti.input_side(), ti.input_side()}, 0.0, 1.0);
  Tape tape(Precision::float64);
  ForwardOptions o;
  o.capture = true;
  const auto r = model_forward(model, image, tape, o);
  const Tensor f = r.capture.blocks.back().features(tape);
  const auto probes = compute_probe_maps(f, Similarity::inner);
  const Tensor m = probes.map(0, 0);
  const bool ok = ti.input_side() == 224 && r.capture.blocks.size() == 12 && f.shape() == Shape{7, 7, 384} &&
                  probes.count() == 49 && m.shape() == Shape{7, 7};
  report(6, ok,
         fmt("ViG-Ti at %zu: %zu blocks, final activation %zux%zux%zu, %zu probe maps of %zux%zu", ti.input_side(),
             r.capture.blocks.size(), f.dim(0), f.dim(1), f.dim(2), probes.count(), m.dim(0), m.dim(1)));
}

// ---------------------------------------------------------------- 8

MetricsReport random_report(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-500.0, 100.0);
  MetricsReport r;
  r.method = rng() % 2 ? "vscam" : "gradcam";
  r.score_mode = rng() % 2 ? "softmax" : "logit";
  r.layer = rng() % 12;
  r.measure = std::string(to_string(kAllSimilarities[rng() % 4]));
  if (rng() % 2) r.top_k = 1 + rng() % 49;
  const std::size_t n = 1 + rng() % 40, classes = 2 + rng() % 6;
  for (std::size_t i = 0; i < n; ++i) {
    ImageMetrics m;
    m.index = i;
    m.filename = "img_" + std::to_string(rng());
    m.label = rng() % classes;
    m.score_original = std::ldexp(std::uniform_real_distribution<double>(0.5, 1.0)(rng), -static_cast<int>(rng() % 60));
    m.score_explained = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    m.drop = u(rng);
    if (rng() % 3) m.localization = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    r.per_image.push_back(m);
  }
  aggregate_report(r, classes);
  if (rng() % 2) r.median_localization = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return r;
}

void round_trips() {
  const fs::path dir = fs::temp_directory_path() / "vscam_acceptance_io";
  fs::create_directories(dir);
  std::mt19937_64 rng(808);
  std::size_t weights_ok = 0, reports_ok = 0;
  for (std::size_t t = 0; t < kRoundTrips; ++t) {
    ViGConfig cfg = ViGConfig::desk();
    cfg.n_classes = 2 + rng() % 9;
    cfg.stages[0].block_count = 1 + rng() % 2;
    cfg.positional_embedding = rng() % 2;
    ViGModel model = init_random(cfg, rng());
    // Exercise the full float range, not just initialisation values.
    for (auto& [name, w] : model.weights())
      for (double& v : model.weight(name).data())
        v = static_cast<float>(std::ldexp(std::uniform_real_distribution<double>(-1.0, 1.0)(rng),
                                          static_cast<int>(rng() % 200) - 100));
    const fs::path wp = dir / "m.vscw";
    save_weights(model, wp);
    weights_ok += load_weights(cfg, wp).weights() == model.weights();

    const MetricsReport r = random_report(rng);
    const fs::path rp = dir / "r.json";
    export_report(r, rp);
    reports_ok += load_report(rp) == r;
  }
  fs::remove_all(dir);
  report(8, weights_ok == kRoundTrips && reports_ok == kRoundTrips,
         fmt("round trips: VSCW %zu/%zu lossless, JSON report %zu/%zu lossless", weights_ok, kRoundTrips, reports_ok,
             kRoundTrips));
}

}  // namespace

int main() {
  gradient_fidelity();
  oracle_equivalence();
  structural_invariants();
  worked_example();

  ViGModel model = init_random(ViGConfig::desk(), kModelSeed);
  const auto test = items_of(synth_generate(kTestImages, 32, kTestDataSeed));
  end_to_end(model, test);
  shape_ledger();
  ablation(model, test);
  round_trips();

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

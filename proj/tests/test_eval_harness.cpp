#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "support/oracles.hpp"
#include "vscam/errors.hpp"
#include "vscam/eval.hpp"
#include "vscam/synth.hpp"
#include "vscam/vig_model.hpp"

using namespace vscam;
namespace fs = std::filesystem;

namespace {

ImageMetrics row(std::size_t index, std::size_t label, double drop) {
  ImageMetrics m;
  m.index = index;
  m.filename = "img" + std::to_string(index) + ".png";
  m.label = label;
  m.score_original = 0.5;
  m.score_explained = 0.5 * (1.0 - drop / 100.0);
  m.drop = drop;
  return m;
}

std::vector<DatasetItem> as_items(const std::vector<SyntheticSample>& s) {
  std::vector<DatasetItem> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    out.push_back({"s" + std::to_string(i) + ".png", s[i].image, s[i].label, s[i].mask});
  return out;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("vscam_eval_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

// ---------------------------------------------------------------- explanation map

TEST(ExplanationMap, OnesZerosAndHalfPlane) {
  std::mt19937_64 rng(1);
  const Tensor image = oracle::random_tensor(rng, {3, 6, 8}, 0.0, 1.0);
  EXPECT_EQ(explanation_map(Heatmap{Tensor({6, 8}, 1.0)}, image), image);
  const Tensor black = explanation_map(Heatmap{Tensor({6, 8})}, image);
  for (double v : black.data()) EXPECT_EQ(v, 0.0);

  Tensor half({6, 8});
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 4; x < 8; ++x) half.at(y, x) = 1.0;
  const Tensor l = explanation_map(Heatmap{half}, image);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(l.at(c, y, x), x < 4 ? 0.0 : image.at(c, y, x));
}

TEST(ExplanationMap, SizeMismatch) {
  EXPECT_THROW(explanation_map(Heatmap{Tensor({6, 8})}, Tensor({3, 8, 6})), DimensionError);
}

// ---------------------------------------------------------------- confidence drop

TEST(ConfidenceDrop, WorkedExampleIsSeventyFive) {
  EXPECT_EQ(confidence_drop_percent(0.8, 0.2), 75.0);
  EXPECT_EQ(confidence_drop_percent(0.4, 0.4), 0.0);
}

TEST(ConfidenceDrop, IncreaseIsNegative) {
  EXPECT_LT(confidence_drop_percent(0.3, 0.6), 0.0);
  EXPECT_DOUBLE_EQ(confidence_drop_percent(0.3, 0.6), -100.0);
}

TEST(ConfidenceDrop, NonPositiveOriginalScore) {
  EXPECT_THROW(confidence_drop_percent(0.0, 0.5), DomainError);
  EXPECT_THROW(confidence_drop_percent(-1.0, 0.5), DomainError);
}

TEST(ConfidenceDrop, UnoccludedImageHasZeroDrop) {
  const ViGModel model = init_random(ViGConfig::desk(), 2);
  for (const auto& s : synth_generate(8, 32, 3)) {
    const Heatmap ones{Tensor({32, 32}, 1.0)};
    const DropResult r = confidence_drop(model, s.image, ones, s.label);
    EXPECT_EQ(r.drop, 0.0);
    EXPECT_EQ(r.score_original, r.score_explained);
    // Logit scores may be negative, which the drop formula rejects.
    if (predict_logits(model, s.image)[s.label] > 0.0) {
      EXPECT_EQ(confidence_drop(model, s.image, ones, s.label, ScoreMode::logit).drop, 0.0);
    } else {
      EXPECT_THROW(confidence_drop(model, s.image, ones, s.label, ScoreMode::logit), DomainError);
    }
  }
}

TEST(ConfidenceDrop, SoftmaxScoresArePositiveProbabilities) {
  const ViGModel model = init_random(ViGConfig::desk(), 2);
  const auto s = synth_sample(0, 32, 4);
  const DropResult r = confidence_drop(model, s.image, Heatmap{Tensor({32, 32}, 0.5)}, 1);
  EXPECT_GT(r.score_original, 0.0);
  EXPECT_LT(r.score_original, 1.0);
  EXPECT_DOUBLE_EQ(r.drop, 100.0 * (1.0 - r.score_explained / r.score_original));
  EXPECT_THROW(confidence_drop(model, s.image, Heatmap{Tensor({32, 32}, 1.0)}, 4), DomainError);
}

// ---------------------------------------------------------------- localization

TEST(Localization, PerfectAndUniform) {
  const auto s = synth_sample(2, 32, 5);
  EXPECT_EQ(localization_mass(s.mask, s.mask), 1.0);
  Tensor quarter({4, 4});
  for (std::size_t i = 0; i < 4; ++i) quarter[i] = 1.0;
  EXPECT_DOUBLE_EQ(localization_mass(Tensor({4, 4}, 0.7), quarter), 0.25);
}

TEST(Localization, HandBuiltCaseMatchesDirectSum) {
  const Tensor h = Tensor::from({4, 4}, {0.1, 0.2, 0.0, 0.4, 0.5, 1.0, 0.3, 0.0, 0.0, 0.6, 0.2, 0.1, 0.9, 0.0, 0.0, 0.7});
  const Tensor m = Tensor::from({4, 4}, {0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0});
  double in = 0.0, all = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    all += h[i];
    if (m[i] > 0.5) in += h[i];
  }
  EXPECT_NEAR(localization_mass(h, m), in / all, 1e-15);
}

TEST(Localization, InvariantToRawRescaling) {
  std::mt19937_64 rng(6);
  const auto s = synth_sample(1, 32, 6);
  const Tensor raw = oracle::random_tensor(rng, {32, 32});
  const double base = localization_mass(normalize_minmax(raw), s.mask);
  for (double lambda : {1e-3, 0.5, 7.0, 1e4}) {
    Tensor scaled = raw;
    for (double& v : scaled.data()) v *= lambda;
    EXPECT_NEAR(localization_mass(normalize_minmax(scaled), s.mask), base, 1e-12);
  }
}

TEST(Localization, Errors) {
  EXPECT_THROW(localization_mass(Tensor({4, 4}), Tensor({4, 4}, 1.0)), DomainError);
  EXPECT_THROW(localization_mass(Tensor({4, 4}, 1.0), Tensor({4, 5}, 1.0)), DimensionError);
}

// ---------------------------------------------------------------- synthetic data

TEST(Synth, Deterministic) {
  const auto a = synth_generate(12, 24, 77), b = synth_generate(12, 24, 77);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].label, b[i].label);
  }
  const auto c = synth_generate(12, 24, 78);
  EXPECT_NE(a[0].image, c[0].image);
  // prefix stability
  const auto longer = synth_generate(20, 24, 77);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image, longer[i].image);
}

TEST(Synth, BalancedClasses) {
  std::size_t counts[4] = {};
  for (const auto& s : synth_generate(40, 16, 1)) ++counts[s.label];
  for (std::size_t c : counts) EXPECT_EQ(c, 10u);
  std::size_t odd[4] = {};
  for (const auto& s : synth_generate(43, 16, 1)) ++odd[s.label];
  const auto [lo, hi] = std::minmax_element(std::begin(odd), std::end(odd));
  EXPECT_LE(*hi - *lo, 1u);
}

TEST(Synth, MasksAndPixelsInBounds) {
  for (std::size_t side : {16u, 32u, 48u}) {
    for (const auto& s : synth_generate(40, side, 9)) {
      double covered = 0.0;
      for (double v : s.mask.data()) {
        ASSERT_TRUE(v == 0.0 || v == 1.0);
        covered += v;
      }
      const double frac = covered / static_cast<double>(side * side);
      EXPECT_GE(frac, kMinMaskFraction);
      EXPECT_LE(frac, kMaxMaskFraction);
      for (double v : s.image.data()) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        ASSERT_EQ(v, std::round(v * 255.0) / 255.0);
      }
    }
  }
}

TEST(Synth, SideBelowSixteenRejected) {
  EXPECT_THROW(synth_generate(4, 8, 1), DomainError);
  EXPECT_THROW(synth_sample(0, 15, 1), DomainError);
}

TEST_F(TempDir, DatasetRoundTrip) {
  const auto samples = synth_generate(6, 16, 3);
  write_dataset(dir_, samples);
  EXPECT_TRUE(fs::exists(dir_ / "labels.tsv"));
  const auto items = read_dataset(dir_);
  ASSERT_EQ(items.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(items[i].label, samples[i].label);
    EXPECT_EQ(items[i].image, samples[i].image);
    ASSERT_TRUE(items[i].mask.has_value());
    EXPECT_EQ(*items[i].mask, samples[i].mask);
  }
}

TEST_F(TempDir, DatasetWithoutMasksAndBadLabels) {
  write_dataset(dir_, synth_generate(4, 16, 3));
  fs::remove_all(dir_ / "masks");
  for (const auto& it : read_dataset(dir_)) EXPECT_FALSE(it.mask.has_value());
  std::ofstream(dir_ / "labels.tsv") << "missing_tab.png 1\n";
  EXPECT_THROW(read_dataset(dir_), FormatError);
  EXPECT_THROW(read_dataset(dir_ / "nowhere"), FormatError);
}

// ---------------------------------------------------------------- aggregation

TEST(Aggregate, Singleton) {
  MetricsReport r;
  r.per_image = {row(0, 0, 75.0)};
  aggregate_report(r, 4);
  EXPECT_EQ(r.n_images, 1u);
  EXPECT_EQ(r.mean_confidence_drop, 75.0);
  EXPECT_EQ(r.increase_count, 0u);
  EXPECT_EQ(r.increase_percent, 0.0);
  ASSERT_EQ(r.per_class.size(), 4u);
  EXPECT_EQ(r.per_class[0].n_images, 1u);
  EXPECT_EQ(r.per_class[1].n_images, 0u);
}

TEST(Aggregate, PlusMinusTen) {
  MetricsReport r;
  r.per_image = {row(0, 1, 10.0), row(1, 2, -10.0)};
  aggregate_report(r, 4);
  EXPECT_EQ(r.mean_confidence_drop, 0.0);
  EXPECT_EQ(r.mean_clamped_drop, 5.0);
  EXPECT_EQ(r.increase_count, 1u);
  EXPECT_EQ(r.increase_percent, 50.0);
  EXPECT_EQ(r.per_class[2].increase_count, 1u);
  EXPECT_EQ(r.per_class[2].drops, std::vector<double>{-10.0});
}

TEST(Aggregate, ZeroDropIsNotAnIncrease) {
  MetricsReport r;
  r.per_image = {row(0, 0, 0.0), row(1, 0, -1e-300)};
  aggregate_report(r, 1);
  EXPECT_EQ(r.increase_count, 1u);
}

TEST(Aggregate, RandomReportsAreConsistent) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-150.0, 100.0);
  for (int trial = 0; trial < 50; ++trial) {
    MetricsReport r;
    const std::size_t n = 1 + rng() % 30;
    for (std::size_t i = 0; i < n; ++i) r.per_image.push_back(row(i, rng() % 4, u(rng)));
    aggregate_report(r, 4);
    double sum = 0.0;
    std::size_t inc = 0, per_class_total = 0;
    for (const auto& m : r.per_image) {
      sum += m.drop;
      inc += m.drop < 0.0;
    }
    EXPECT_NEAR(r.mean_confidence_drop, sum / static_cast<double>(n), 1e-9);
    EXPECT_EQ(r.increase_count, inc);
    EXPECT_LE(r.increase_count, r.n_images);
    EXPECT_GE(r.increase_percent, 0.0);
    EXPECT_LE(r.increase_percent, 100.0);
    for (const auto& c : r.per_class) per_class_total += c.n_images;
    EXPECT_EQ(per_class_total, n);
  }
}

TEST(Aggregate, Errors) {
  MetricsReport empty;
  EXPECT_THROW(aggregate_report(empty, 4), DomainError);
  MetricsReport r;
  r.per_image = {row(0, 5, 1.0)};
  EXPECT_THROW(aggregate_report(r, 4), DomainError);
  EXPECT_THROW(median({}), DomainError);
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}

// ---------------------------------------------------------------- evaluate_dataset

TEST(EvaluateDataset, ReportMatchesPerImageRows) {
  const ViGModel model = init_random(ViGConfig::desk(), 11);
  const auto items = as_items(synth_generate(8, 32, 12));
  for (CamMethod m : {CamMethod::vscam, CamMethod::gradcam}) {
    EvalOptions o;
    o.explain.method = m;
    const MetricsReport r = evaluate_dataset(model, items, o);
    EXPECT_EQ(r.method, std::string(to_string(m)));
    EXPECT_EQ(r.score_mode, "softmax");
    EXPECT_EQ(r.layer, 1u);
    ASSERT_EQ(r.per_image.size(), 8u);
    ASSERT_EQ(r.per_class.size(), 4u);
    double sum = 0.0;
    std::size_t inc = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      const auto& p = r.per_image[i];
      EXPECT_EQ(p.label, items[i].label);
      EXPECT_EQ(p.filename, items[i].filename);
      EXPECT_DOUBLE_EQ(p.drop, confidence_drop_percent(p.score_original, p.score_explained));
      ASSERT_TRUE(p.localization.has_value());
      EXPECT_GE(*p.localization, 0.0);
      EXPECT_LE(*p.localization, 1.0);
      sum += p.drop;
      inc += p.drop < 0.0;
    }
    EXPECT_NEAR(r.mean_confidence_drop, sum / 8.0, 1e-9);
    EXPECT_EQ(r.increase_count, inc);
    EXPECT_TRUE(r.median_localization.has_value());
  }
}

TEST(EvaluateDataset, EmptyDatasetRejected) {
  const ViGModel model = init_random(ViGConfig::desk(), 11);
  EXPECT_THROW(evaluate_dataset(model, std::span<const DatasetItem>{}, {}), DomainError);
}

TEST(EvaluateDataset, NoMasksMeansNoLocalization) {
  const ViGModel model = init_random(ViGConfig::desk(), 11);
  auto items = as_items(synth_generate(2, 32, 12));
  for (auto& it : items) it.mask.reset();
  const MetricsReport r = evaluate_dataset(model, items, {});
  EXPECT_FALSE(r.median_localization.has_value());
  for (const auto& p : r.per_image) EXPECT_FALSE(p.localization.has_value());
}

// ---------------------------------------------------------------- export

TEST_F(TempDir, JsonRoundTripIsExact) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  MetricsReport r;
  r.method = "vscam";
  r.measure = "inner";
  r.layer = 1;
  r.top_k = 5;
  for (std::size_t i = 0; i < 9; ++i) {
    r.per_image.push_back(row(i, i % 4, u(rng)));
    r.per_image.back().score_original = std::ldexp(u(rng), -40);
    if (i % 2) r.per_image.back().localization = 1.0 / 3.0 + i;
  }
  aggregate_report(r, 4);
  r.median_localization = 0.1 + 0.2;

  const nlohmann::json j = report_to_json(r);
  EXPECT_EQ(j.at("schema_version"), kReportSchemaVersion);
  EXPECT_EQ(j.at("per_class").size(), 4u);
  EXPECT_EQ(report_from_json(j), r);

  const fs::path p = dir_ / "r.json";
  export_report(r, p);
  EXPECT_EQ(load_report(p), r);
}

TEST_F(TempDir, JsonValidation) {
  MetricsReport r;
  r.method = "gradcam";
  r.per_image = {row(0, 0, 1.0)};
  aggregate_report(r, 2);
  nlohmann::json j = report_to_json(r);
  nlohmann::json missing = j;
  missing.erase("increase_count");
  EXPECT_THROW(report_from_json(missing), FormatError);
  nlohmann::json wrong = j;
  wrong["n_images"] = "one";
  EXPECT_THROW(report_from_json(wrong), FormatError);
  nlohmann::json version = j;
  version["schema_version"] = 99;
  EXPECT_THROW(report_from_json(version), FormatError);
  nlohmann::json no_classes = j;
  no_classes["per_class"] = nlohmann::json::array();
  EXPECT_THROW(report_from_json(no_classes), FormatError);

  std::ofstream(dir_ / "bad.json") << "{not json";
  EXPECT_THROW(load_report(dir_ / "bad.json"), FormatError);
  try {
    export_report(r, dir_ / "no" / "such" / "dir" / "r.json");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("r.json"), std::string::npos);
  }
}

TEST_F(TempDir, CsvExports) {
  MetricsReport r;
  r.method = "vscam";
  for (std::size_t i = 0; i < 7; ++i) r.per_image.push_back(row(i, i % 3, 10.0 * i - 20.0));
  aggregate_report(r, 4);
  write_class_csv(r, dir_ / "c.csv");
  write_image_csv(r, dir_ / "i.csv");
  EXPECT_EQ(count_lines(dir_ / "c.csv"), 1u + 4u);
  EXPECT_EQ(count_lines(dir_ / "i.csv"), 1u + 7u);
  std::ifstream in(dir_ / "i.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "index,filename,label,score_original,score_explained,confidence_drop,localization_mass");
}

TEST(Reference, DocumentedFigures) {
  EXPECT_EQ(reference::kGradcamConfidenceDrop, 24.49);
  EXPECT_EQ(reference::kGradcamIncreasePercent, 13.97);
  EXPECT_EQ(reference::kVscamConfidenceDrop, 9.01);
  EXPECT_EQ(reference::kVscamIncreasePercent, 33.05);
}

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "focuskit/cli.hpp"
#include "focuskit/cohort.hpp"
#include "focuskit/error.hpp"
#include "focuskit/pipeline.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/synthgen.hpp"
#include "focuskit/tensor_io.hpp"
#include "test_util.hpp"

namespace focuskit {
namespace {

using nn::Vec;
using nlohmann::json;

constexpr std::size_t kDim = 16;

EncoderSpec identity_encoder() {
  EncoderSpec e;
  e.hidden = {};
  e.embed_dim = kDim;
  e.activation = nn::Activation::kNone;
  return e;
}

// P(ungradable) = sigmoid(gain * x0 + bias).
StageModel quality_model(double gain, double bias) {
  StageModel m(StageTask::kQuality, kDim, identity_encoder(), std::nullopt, 1);
  m.encoder().layers()[0].init_identity();
  auto& w = m.slice_head().weight().value;
  std::fill(w.begin(), w.end(), 0.0);
  w[kDim] = gain;  // row 1, column 0
  m.slice_head().bias().value = {0.0, bias};
  return m;
}

StageModel patient_model(StageTask task, std::uint64_t seed) {
  AggregatorSpec agg;
  agg.hidden_dim = 8;
  EncoderSpec e;
  e.hidden = {12};
  e.embed_dim = 6;
  return StageModel(task, kDim, e, agg, seed);
}

PipelineModels handmade_models(double gain = 50.0, double bias = 0.0) {
  return PipelineModels{quality_model(gain, bias), patient_model(StageTask::kAbnormality, 2),
                        patient_model(StageTask::kDisease, 3),
                        {{"quality", "q"}, {"abnormal", "a"}, {"disease", "d"}}};
}

// Slices with x0 = -1 pass the gate, x0 = +1 fail it. Failing slices take
// the odd positions first.
VolumeBag volume(std::size_t n_good, std::size_t n_bad, std::uint64_t seed) {
  const std::size_t n = n_good + n_bad;
  std::vector<std::size_t> order;
  for (std::size_t i = 1; i < n; i += 2) order.push_back(i);
  for (std::size_t i = 0; i < n; i += 2) order.push_back(i);
  std::vector<bool> bad(n, false);
  for (std::size_t k = 0; k < n_bad; ++k) bad[order[k]] = true;
  Rng rng(seed);
  VolumeBag bag;
  bag.patient_id = "V" + std::to_string(seed);
  bag.center_id = "C1";
  for (std::size_t i = 0; i < n; ++i) {
    Vec x(kDim);
    for (double& v : x) v = rng.normal();
    x[0] = bad[i] ? 1.0 : -1.0;
    bag.slices.push_back(SliceFeature{x});
  }
  bag.slice_quality.assign(n, QualityLabel::kGradable);
  bag.slice_abnormal.assign(n, false);
  return bag;
}

PipelineConfig always_diseased() {
  PipelineConfig c;
  c.abnormal_threshold = 1e-12;
  return c;
}

// ---- routing rules ----

TEST(Pipeline, AllSlicesUngradable) {
  PipelineModels models = handmade_models(0.0, 10.0);
  const auto r = run_pipeline(volume(6, 0, 1), models, PipelineConfig{});
  EXPECT_EQ(r.status, ReportStatus::kUngradable);
  EXPECT_DOUBLE_EQ(r.gradable_fraction, 0.0);
  EXPECT_TRUE(r.reason.has_value());
  EXPECT_FALSE(r.abnormal_probability.has_value());
  EXPECT_FALSE(r.disease.has_value());
  EXPECT_FALSE(r.disease_posterior.has_value());
  EXPECT_TRUE(r.evidence.empty());
  for (const auto& s : r.slices) EXPECT_FALSE(s.p_abnormal.has_value());
  EXPECT_NO_THROW(check_report_invariants(r, 5));
  EXPECT_EQ(r.timings_ms.count("abnormal"), 0u);
}

TEST(Pipeline, GradableFractionThresholdBoundary) {
  const PipelineModels models = handmade_models();
  const VolumeBag v = volume(4, 4, 2);
  PipelineConfig c = always_diseased();
  c.gradable_fraction_threshold = 0.5;
  const auto at = run_pipeline(v, models, c);
  EXPECT_DOUBLE_EQ(at.gradable_fraction, 0.5);
  EXPECT_NE(at.status, ReportStatus::kUngradable);
  c.gradable_fraction_threshold = 0.51;
  EXPECT_EQ(run_pipeline(v, models, c).status, ReportStatus::kUngradable);
}

TEST(Pipeline, NormalStopsBeforeDiagnosis) {
  const PipelineModels models = handmade_models();
  PipelineConfig c;
  c.abnormal_threshold = 1.0 - 1e-12;
  const auto r = run_pipeline(volume(7, 1, 4), models, c);
  EXPECT_EQ(r.status, ReportStatus::kNormal);
  ASSERT_TRUE(r.abnormal_probability.has_value());
  EXPECT_LT(*r.abnormal_probability, c.abnormal_threshold);
  EXPECT_FALSE(r.disease.has_value());
  EXPECT_TRUE(r.evidence.empty());
  EXPECT_EQ(r.timings_ms.count("disease"), 0u);
  EXPECT_NO_THROW(check_report_invariants(r, c.evidence_top_k));
}

TEST(Pipeline, DiagnosisNeverNamesNormal) {
  PipelineModels models = handmade_models();
  nn::Linear& head = *models.disease.patient_head();
  std::fill(head.weight().value.begin(), head.weight().value.end(), 0.0);
  head.bias().value = {40.0, 1.0, 2.0, 3.0, 9.0, 3.0, 2.0, 9.0, 1.0};
  const auto r = run_pipeline(volume(6, 0, 5), models, always_diseased());
  EXPECT_EQ(r.status, ReportStatus::kDiseased);
  // Classes 4 and 7 tie; the lower index wins.
  EXPECT_EQ(r.disease, disease_from_index(4));
  ASSERT_TRUE(r.disease_posterior.has_value());
  EXPECT_GT((*r.disease_posterior)[0], 0.99);
}

// Evidence must be the top-k disease-stage weights over the kept slices,
// reported with original slice indices.
TEST(Pipeline, EvidenceMatchesDiseaseStageWeights) {
  const PipelineModels models = handmade_models();
  const VolumeBag v = volume(8, 3, 6);
  PipelineConfig c = always_diseased();
  c.evidence_top_k = 4;
  const auto r = run_pipeline(v, models, c);
  ASSERT_EQ(r.status, ReportStatus::kDiseased);
  std::vector<std::size_t> kept;
  std::vector<Vec> xs;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v.slices[i].values[0] < 0) {
      kept.push_back(i);
      xs.push_back(v.slices[i].values);
    }
  }
  const auto pred = infer_stage(models.disease, std::span<const Vec>(xs));
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    ranked.push_back({-pred.aggregation->weights[k], kept[k]});
  }
  std::sort(ranked.begin(), ranked.end());
  ASSERT_EQ(r.evidence.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    EXPECT_EQ(r.evidence[e].slice, ranked[e].second);
    EXPECT_NEAR(r.evidence[e].weight, -ranked[e].first, 1e-15);
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(r.slices[i].gradable, v.slices[i].values[0] < 0);
    EXPECT_EQ(r.slices[i].disease_posterior.has_value(), r.slices[i].gradable);
  }
  EXPECT_NO_THROW(check_report_invariants(r, c.evidence_top_k));
}

TEST(Pipeline, EvidenceShorterThanTopKForSmallBags) {
  const PipelineModels models = handmade_models();
  PipelineConfig c = always_diseased();
  c.evidence_top_k = 10;
  const auto r = run_pipeline(volume(3, 0, 7), models, c);
  EXPECT_EQ(r.evidence.size(), 3u);
}

// Dropped slices cannot influence later stages.
TEST(Pipeline, DroppedSlicesAreIsolated) {
  const PipelineModels models = handmade_models();
  const VolumeBag clean = volume(6, 3, 8);
  VolumeBag garbage = clean;
  for (auto& s : garbage.slices) {
    if (s.values[0] > 0) {
      for (std::size_t j = 1; j < kDim; ++j) s.values[j] = 1e3 * (j % 2 ? 1.0 : -1.0);
    }
  }
  const auto a = run_pipeline(clean, models, always_diseased());
  const auto b = run_pipeline(garbage, models, always_diseased());
  EXPECT_EQ(a.abnormal_probability, b.abnormal_probability);
  EXPECT_EQ(a.disease_posterior, b.disease_posterior);
  ASSERT_EQ(a.evidence.size(), b.evidence.size());
  for (std::size_t e = 0; e < a.evidence.size(); ++e) {
    EXPECT_EQ(a.evidence[e].slice, b.evidence[e].slice);
  }
  PipelineConfig keep = always_diseased();
  keep.drop_ungradable_slices = false;
  EXPECT_NE(run_pipeline(clean, models, keep).abnormal_probability,
            run_pipeline(garbage, models, keep).abnormal_probability);
}

TEST(Pipeline, ModelVersionsCopied) {
  const PipelineModels models = handmade_models();
  const auto r = run_pipeline(volume(4, 0, 9), models, PipelineConfig{});
  EXPECT_EQ(r.model_versions.at("disease"), "d");
}

TEST(Pipeline, RejectsEmptyVolumeAndMismatchedModels) {
  const PipelineModels models = handmade_models();
  VolumeBag empty;
  empty.patient_id = "E";
  EXPECT_THROW(run_pipeline(empty, models, PipelineConfig{}), ValidationError);
  PipelineModels swapped = handmade_models();
  std::swap(swapped.abnormal, swapped.disease);
  EXPECT_THROW(swapped.check_compatible(), CheckpointError);
  PipelineModels narrow = handmade_models();
  narrow.disease = StageModel(StageTask::kDisease, kDim - 1, EncoderSpec{}, AggregatorSpec{}, 1);
  EXPECT_THROW(narrow.check_compatible(), CheckpointError);
  EXPECT_NO_THROW(handmade_models().check_compatible());
}

TEST(PipelineConfig, Validation) {
  PipelineConfig c;
  EXPECT_NO_THROW(validate_pipeline_config(c));
  c.gradable_fraction_threshold = 0.0;
  EXPECT_THROW(validate_pipeline_config(c), SpecError);
  c = PipelineConfig{};
  c.abnormal_threshold = 1.0;
  EXPECT_THROW(validate_pipeline_config(c), SpecError);
  c = PipelineConfig{};
  c.evidence_top_k = 0;
  EXPECT_THROW(validate_pipeline_config(c), SpecError);
}

// ---- report invariants and serialization ----

TEST(ReportProperty, InvariantsHoldAndJsonRoundtrips) {
  const PipelineModels models = handmade_models();
  Rng rng(10);
  std::set<ReportStatus> seen;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t good = rng.below(8);
    const std::size_t bad = rng.below(5);
    if (good + bad == 0) continue;
    PipelineConfig c;
    c.gradable_fraction_threshold = rng.uniform(0.05, 1.0);
    c.abnormal_threshold = rng.uniform(0.05, 0.95);
    c.evidence_top_k = 1 + rng.below(6);
    const auto r = run_pipeline(volume(good, bad, 100 + trial), models, c);
    seen.insert(r.status);
    ASSERT_NO_THROW(check_report_invariants(r, c.evidence_top_k));
    const json j = report_to_json(r);
    const PipelineReport back = report_from_json(j);
    ASSERT_EQ(report_to_json(back).dump(), j.dump());
  }
  EXPECT_EQ(seen.size(), 3u);
}

TEST(Report, InvariantViolationsDetected) {
  PipelineReport r;
  r.patient_id = "X";
  r.status = ReportStatus::kUngradable;
  r.abnormal_probability = 0.3;
  EXPECT_THROW(check_report_invariants(r, 5), ValidationError);
  r.status = ReportStatus::kNormal;
  r.disease = DiseaseLabel::kAMD;
  EXPECT_THROW(check_report_invariants(r, 5), ValidationError);
  r.status = ReportStatus::kDiseased;
  r.disease = DiseaseLabel::kNormal;
  r.disease_posterior = Vec(9, 1.0 / 9.0);
  EXPECT_THROW(check_report_invariants(r, 5), ValidationError);
  r.disease = DiseaseLabel::kAMD;
  r.evidence = {{0, 0.2, 0.5}, {1, 0.7, 0.5}};
  EXPECT_THROW(check_report_invariants(r, 5), ValidationError);
  r.evidence = {{1, 0.7, 0.5}, {0, 0.2, 0.5}};
  EXPECT_NO_THROW(check_report_invariants(r, 5));
  EXPECT_THROW(check_report_invariants(r, 1), ValidationError);
}

TEST(Report, MalformedJsonRejected) {
  EXPECT_THROW(report_from_json(json::object()), FormatError);
  json j = report_to_json(PipelineReport{});
  j["status"] = "Maybe";
  EXPECT_THROW(report_from_json(j), FormatError);
  j = report_to_json(PipelineReport{});
  j["schema_version"] = 99;
  EXPECT_THROW(report_from_json(j), FormatError);
}

// ---- batch runs ----

json masked(const std::filesystem::path& file) {
  std::ifstream in(file);
  json j = json::parse(in);
  j.erase("timings_ms");
  if (j.contains("mean_latency_ms")) j.erase("mean_latency_ms");
  return j;
}

class Batch : public ::testing::Test {
 protected:
  void SetUp() override {
    CohortSpec spec = default_cohort_spec();
    spec.n_patients = 10;
    spec.seed = 5;
    gen_cohort(spec, (dir_ / "data").string());
  }
  testing::TempDir dir_;
};

TEST_F(Batch, OneReportPerPatientAndCountsConserved) {
  const PipelineModels models = handmade_models();
  const auto summary = run_batch(dir_ / "data" / "manifest.json", models, PipelineConfig{},
                                 dir_ / "out");
  EXPECT_EQ(summary.n_input, 10u);
  EXPECT_TRUE(summary.failures.empty());
  std::size_t total = 0;
  for (const auto& [status, count] : summary.status_counts) total += count;
  EXPECT_EQ(total, 10u);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir_ / "out" / "reports")) {
    files += e.path().extension() == ".json" ? 1 : 0;
  }
  EXPECT_EQ(files, 10u);
  const json s = masked(dir_ / "out" / "summary.json");
  EXPECT_EQ(s["n_reports"], 10);
}

TEST_F(Batch, CorruptTensorIsRecordedNotFatal) {
  const Manifest m = read_manifest(dir_ / "data" / "manifest.json");
  const auto victim = dir_ / "data" / m.volumes[3].tensor_path;
  std::filesystem::resize_file(victim, std::filesystem::file_size(victim) - 3);
  const PipelineModels models = handmade_models();
  const auto summary = run_batch(dir_ / "data" / "manifest.json", models, PipelineConfig{},
                                 dir_ / "out");
  ASSERT_EQ(summary.failures.size(), 1u);
  EXPECT_EQ(summary.failures[0].patient_id, m.volumes[3].patient_id);
  std::size_t total = 0;
  for (const auto& [status, count] : summary.status_counts) total += count;
  EXPECT_EQ(total, 9u);
  EXPECT_FALSE(
      std::filesystem::exists(dir_ / "out" / "reports" / (m.volumes[3].patient_id + ".json")));
}

TEST_F(Batch, RerunIsIdenticalApartFromTimings) {
  const PipelineModels models = handmade_models();
  const auto manifest = dir_ / "data" / "manifest.json";
  run_batch(manifest, models, PipelineConfig{}, dir_ / "a");
  BatchOptions threaded;
  threaded.threads = 3;
  run_batch(manifest, models, PipelineConfig{}, dir_ / "b", threaded);
  for (const auto& e : std::filesystem::directory_iterator(dir_ / "a" / "reports")) {
    const auto other = dir_ / "b" / "reports" / e.path().filename();
    ASSERT_TRUE(std::filesystem::exists(other));
    EXPECT_EQ(masked(e.path()).dump(), masked(other).dump()) << e.path().filename();
  }
  EXPECT_EQ(masked(dir_ / "a" / "summary.json").dump(),
            masked(dir_ / "b" / "summary.json").dump());
}

TEST_F(Batch, SplitFilter) {
  const PipelineModels models = handmade_models();
  BatchOptions test_only;
  test_only.split = Split::kTest;
  const Manifest m = read_manifest(dir_ / "data" / "manifest.json");
  std::size_t expected = 0;
  for (const auto& v : m.volumes) expected += v.split == Split::kTest ? 1 : 0;
  const auto summary = run_batch(dir_ / "data" / "manifest.json", models, PipelineConfig{},
                                 dir_ / "out", test_only);
  EXPECT_EQ(summary.n_input, expected);
}

// ---- trained models ----

class Trained : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir();
    std::ostringstream out;
    std::ostringstream err;
    const std::string data = (*dir_ / "data").string();
    const std::string models = (*dir_ / "models").string();
    ASSERT_EQ(run_cli({"generate", "--out", data}, out, err), 0) << err.str();
    ASSERT_EQ(run_cli({"train", "--data", data, "--out", models}, out, err), 0) << err.str();
    models_ = new PipelineModels(PipelineModels::load(models));
    cohort_ = new Cohort(load_cohort(*dir_ / "data" / "manifest.json"));
  }
  static void TearDownTestSuite() {
    delete cohort_;
    delete models_;
    delete dir_;
  }
  static testing::TempDir* dir_;
  static PipelineModels* models_;
  static Cohort* cohort_;
};
testing::TempDir* Trained::dir_ = nullptr;
PipelineModels* Trained::models_ = nullptr;
Cohort* Trained::cohort_ = nullptr;

TEST_F(Trained, LoadedModelsAreCompatibleAndVersioned) {
  EXPECT_NO_THROW(models_->check_compatible());
  EXPECT_EQ(models_->versions.size(), 3u);
  testing::TempDir empty;
  EXPECT_THROW(PipelineModels::load(empty.path()), CheckpointError);
}

TEST_F(Trained, RaisingGradableThresholdOnlyAddsUngradable) {
  std::vector<const VolumeBag*> bags = cohort_->in_split(Split::kTest);
  std::set<std::string> previous;
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 1.0}) {
    PipelineConfig c;
    c.gradable_fraction_threshold = tau;
    std::set<std::string> ungradable;
    for (const VolumeBag* bag : bags) {
      if (run_pipeline(*bag, *models_, c).status == ReportStatus::kUngradable) {
        ungradable.insert(bag->patient_id);
      }
    }
    EXPECT_TRUE(std::includes(ungradable.begin(), ungradable.end(), previous.begin(),
                              previous.end()))
        << "tau " << tau;
    previous = std::move(ungradable);
  }
}

TEST_F(Trained, RaisingAbnormalThresholdOnlyRemovesDiseased) {
  std::vector<const VolumeBag*> bags = cohort_->in_split(Split::kTest);
  std::set<std::string> previous;
  bool first = true;
  for (double tau : {0.05, 0.2, 0.5, 0.8, 0.95}) {
    PipelineConfig c;
    c.abnormal_threshold = tau;
    std::set<std::string> diseased;
    for (const VolumeBag* bag : bags) {
      if (run_pipeline(*bag, *models_, c).status == ReportStatus::kDiseased) {
        diseased.insert(bag->patient_id);
      }
    }
    if (!first) {
      EXPECT_TRUE(std::includes(previous.begin(), previous.end(), diseased.begin(),
                                diseased.end()))
          << "tau " << tau;
    }
    first = false;
    previous = std::move(diseased);
  }
}

// A Normal verdict always comes from triage, below the threshold, and most
// gradable Normal patients get one.
TEST_F(Trained, NormalVerdictsComeFromTriage) {
  const PipelineConfig c;
  std::size_t normal_verdicts = 0;
  for (const VolumeBag* bag : cohort_->in_split(Split::kTest)) {
    const auto r = run_pipeline(*bag, *models_, c);
    if (r.status != ReportStatus::kNormal) continue;
    ++normal_verdicts;
    ASSERT_TRUE(r.abnormal_probability.has_value());
    EXPECT_LT(*r.abnormal_probability, c.abnormal_threshold);
    EXPECT_EQ(r.timings_ms.count("disease"), 0u);
  }
  EXPECT_GT(normal_verdicts, 0u);
}

// Every gradable planted lesion of a CSC patient diagnosed as CSC shows up in
// the top-5 evidence.
TEST_F(Trained, CscLesionsAppearInEvidence) {
  std::size_t checked = 0;
  for (const VolumeBag* bag : cohort_->in_split(Split::kTest)) {
    if (bag->patient_disease != DiseaseLabel::kCSC) continue;
    const auto r = run_pipeline(*bag, *models_, PipelineConfig{});
    if (r.disease != DiseaseLabel::kCSC) continue;
    std::set<std::size_t> top;
    for (const auto& e : r.evidence) top.insert(e.slice);
    for (std::size_t i = 0; i < bag->size(); ++i) {
      if (!bag->slice_abnormal[i] || !r.slices[i].gradable) continue;
      EXPECT_TRUE(top.count(i)) << bag->patient_id << " lesion slice " << i;
    }
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

}  // namespace
}  // namespace focuskit

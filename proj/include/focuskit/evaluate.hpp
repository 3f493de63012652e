#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "focuskit/aggregate.hpp"
#include "focuskit/cohort.hpp"
#include "focuskit/metrics.hpp"
#include "focuskit/pipeline.hpp"
#include "focuskit/stages.hpp"
#include "json.hpp"

namespace focuskit {

// Scores for one task at one level (slice or patient).
struct EvalSummary {
  std::string name;  // e.g. "disease/patient"
  ClassificationMetrics metrics;
  std::vector<std::optional<double>> class_auc;
  // Mean of the defined one-vs-rest AUCs (binary tasks: the class-1 AUC).
  std::optional<double> macro_auc;
  // Bootstrap 95% CI of macro-F1; absent below 10 samples.
  std::optional<ConfidenceInterval> macro_f1_ci;
  // ROC points per class with a defined AUC (binary tasks: class 1 only).
  std::map<std::size_t, std::vector<RocPoint>> roc;
};

struct EvalOptions {
  std::size_t bootstrap_resamples = 1000;
  std::uint64_t seed = 0;
};

// `scores[i]` holds one score per class for sample i.
EvalSummary summarize(const std::string& name, std::span<const std::size_t> truth,
                      std::span<const std::size_t> pred,
                      std::span<const std::vector<double>> scores,
                      std::size_t n_classes, const EvalOptions& options);

struct GradabilitySummary {
  std::size_t total = 0;
  std::size_t ungradable = 0;
  std::size_t normal = 0;
  std::size_t diseased = 0;
};

// Ungradable reports are counted in `gradability` and excluded from every
// abnormality and disease metric. Patient-level disease scores are
// s_0 = 1 - P(abnormal), s_k = P(abnormal) * q_k with q the disease
// posterior renormalised over classes 1..8 (uniform when stage 3 did not run).
struct EvalGroup {
  std::string group;
  GradabilitySummary gradability;
  // Keys: quality/slice, abnormal/patient, abnormal/slice, disease/patient,
  // disease/slice. A key is absent when the group has no data for it.
  std::map<std::string, EvalSummary> summaries;
};

enum class GroupBy { kAll, kCenter };
GroupBy parse_group_by(const std::string& name);

struct EvalReport {
  EvalGroup overall;
  std::vector<EvalGroup> per_center;  // sorted by center id
};

// Throws UnmatchedError for a report without a truth record or whose slice
// count differs from the truth.
EvalReport evaluate_run(std::span<const PipelineReport> reports,
                        const Manifest& truth, GroupBy group_by,
                        const EvalOptions& options);

std::vector<PipelineReport> read_reports(const std::filesystem::path& dir);

nlohmann::json eval_summary_to_json(const EvalSummary& summary);
nlohmann::json eval_report_to_json(const EvalReport& report);

// eval_summary.json, per_class.csv and roc.csv under `out_dir`.
void write_eval_outputs(const EvalReport& report,
                        const std::filesystem::path& out_dir);

struct AblationConfig {
  StageTask task = StageTask::kAbnormality;
  EncoderSpec encoder;
  AggregatorSpec aggregator;  // kind is overridden per row
  TrainConfig train;
  // Frozen encoder shared by every row (its spec must be `encoder`).
  const nn::Mlp* shared_encoder = nullptr;
};

struct AblationRow {
  PoolKind kind = PoolKind::kMean;
  double patient_auc = 0.0;  // binary AUC, or macro one-vs-rest AUC
  double macro_f1 = 0.0;
};

// Trains one patient stage per pooling kind with identical seed, encoder and
// data, and scores each on the test split's ground-truth gradable slices.
std::vector<AblationRow> ablation_aggregators(const Cohort& cohort,
                                              std::span<const PoolKind> kinds,
                                              const AblationConfig& config);

std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace focuskit

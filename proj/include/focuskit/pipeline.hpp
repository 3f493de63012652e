#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "focuskit/cohort.hpp"
#include "focuskit/stages.hpp"
#include "json.hpp"

namespace focuskit {

inline constexpr int kReportSchemaVersion = 1;

struct PipelineConfig {
  // Volumes with gradable/n below this are rejected as Ungradable.
  double gradable_fraction_threshold = 0.5;
  // P(abnormal) below this stops at Normal.
  double abnormal_threshold = 0.5;
  std::size_t evidence_top_k = 5;
  bool drop_ungradable_slices = true;
};

void validate_pipeline_config(const PipelineConfig& config);

struct PipelineModels {
  StageModel quality;
  StageModel abnormal;
  StageModel disease;
  // Stage name -> checkpoint checksum.
  std::map<std::string, std::string> versions;

  // Loads quality/abnormal/disease checkpoints from `dir`. Throws
  // CheckpointError naming the offending file.
  static PipelineModels load(const std::filesystem::path& dir);
  // Throws CheckpointError if the three stages disagree on dimensions/tasks.
  void check_compatible() const;
};

enum class ReportStatus { kUngradable, kNormal, kDiseased };
std::string report_status_name(ReportStatus status);
ReportStatus parse_report_status(const std::string& name);

struct EvidenceEntry {
  std::size_t slice = 0;  // index in the original volume
  double weight = 0.0;
  double certainty = 0.0;
};

struct SliceReport {
  std::size_t index = 0;
  double p_ungradable = 0.0;
  bool gradable = true;
  // Present once the slice has been seen by the abnormality stage.
  std::optional<double> p_abnormal;
  // Diseased reports only.
  std::optional<nn::Vec> disease_posterior;
};

struct PipelineReport {
  std::string patient_id;
  std::string center_id;
  ReportStatus status = ReportStatus::kUngradable;
  double gradable_fraction = 0.0;
  std::optional<std::string> reason;
  std::optional<double> abnormal_probability;
  std::optional<DiseaseLabel> disease;
  std::optional<nn::Vec> disease_posterior;
  std::vector<EvidenceEntry> evidence;
  std::vector<SliceReport> slices;
  std::map<std::string, std::string> model_versions;
  std::map<std::string, double> timings_ms;
};

// Throws ValidationError when a report breaks the status/field rules.
void check_report_invariants(const PipelineReport& report,
                             std::size_t evidence_top_k);

nlohmann::json report_to_json(const PipelineReport& report);
PipelineReport report_from_json(const nlohmann::json& j);

// Quality gate -> abnormality triage -> disease diagnosis. Ground-truth
// labels on `volume` are ignored.
PipelineReport run_pipeline(const VolumeBag& volume, const PipelineModels& models,
                            const PipelineConfig& config);

struct BatchFailure {
  std::string patient_id;
  std::string error;
};

struct BatchSummary {
  std::size_t n_input = 0;
  std::map<std::string, std::size_t> status_counts;
  std::vector<BatchFailure> failures;
  std::map<std::string, double> mean_latency_ms;
  std::map<std::string, std::string> model_versions;

  nlohmann::json to_json() const;
};

struct BatchOptions {
  // Restrict to one split; all volumes when empty.
  std::optional<Split> split;
  std::size_t threads = 1;
};

// Writes out_dir/reports/<patient_id>.json and out_dir/summary.json.
// Per-patient failures are recorded in the summary and never abort the run.
BatchSummary run_batch(const std::filesystem::path& manifest_path,
                       const PipelineModels& models, const PipelineConfig& config,
                       const std::filesystem::path& out_dir,
                       const BatchOptions& options = {});

}  // namespace focuskit

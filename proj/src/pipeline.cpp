#include "focuskit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "focuskit/error.hpp"
#include "focuskit/tensor_io.hpp"

namespace focuskit {

using nlohmann::json;
using nn::Vec;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename T>
json optional_json(const std::optional<T>& value) {
  return value ? json(*value) : json(nullptr);
}

}  // namespace

void validate_pipeline_config(const PipelineConfig& config) {
  if (!(config.gradable_fraction_threshold > 0.0 &&
        config.gradable_fraction_threshold <= 1.0)) {
    throw SpecError("gradable_fraction_threshold must lie in (0, 1]");
  }
  if (!(config.abnormal_threshold > 0.0 && config.abnormal_threshold < 1.0)) {
    throw SpecError("abnormal_threshold must lie in (0, 1)");
  }
  if (config.evidence_top_k < 1) throw SpecError("evidence_top_k must be >= 1");
}

PipelineModels PipelineModels::load(const std::filesystem::path& dir) {
  PipelineModels models;
  auto quality = load_stage(dir, StageTask::kQuality);
  auto abnormal = load_stage(dir, StageTask::kAbnormality);
  auto disease = load_stage(dir, StageTask::kDisease);
  models.quality = std::move(quality.model);
  models.abnormal = std::move(abnormal.model);
  models.disease = std::move(disease.model);
  models.versions = {{"quality", quality.checksum},
                     {"abnormal", abnormal.checksum},
                     {"disease", disease.checksum}};
  models.check_compatible();
  return models;
}

void PipelineModels::check_compatible() const {
  if (quality.task() != StageTask::kQuality ||
      abnormal.task() != StageTask::kAbnormality ||
      disease.task() != StageTask::kDisease) {
    throw CheckpointError("pipeline stages are loaded in the wrong slots");
  }
  if (!abnormal.is_patient_stage() || !disease.is_patient_stage()) {
    throw CheckpointError("abnormal and disease checkpoints need aggregators");
  }
  if (quality.feature_dim() != abnormal.feature_dim() ||
      quality.feature_dim() != disease.feature_dim()) {
    throw CheckpointError("stage checkpoints disagree on feature dimension");
  }
}

std::string report_status_name(ReportStatus status) {
  switch (status) {
    case ReportStatus::kUngradable: return "Ungradable";
    case ReportStatus::kNormal: return "Normal";
    case ReportStatus::kDiseased: return "Diseased";
  }
  return "?";
}

ReportStatus parse_report_status(const std::string& name) {
  if (name == "Ungradable") return ReportStatus::kUngradable;
  if (name == "Normal") return ReportStatus::kNormal;
  if (name == "Diseased") return ReportStatus::kDiseased;
  throw FormatError("unknown report status '" + name + "'");
}

void check_report_invariants(const PipelineReport& report,
                             std::size_t evidence_top_k) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("report " + report.patient_id + ": " + what);
  };
  const bool diseased = report.status == ReportStatus::kDiseased;
  if (report.status == ReportStatus::kUngradable &&
      report.abnormal_probability.has_value()) {
    fail("Ungradable report carries an abnormality probability");
  }
  if (report.status != ReportStatus::kUngradable &&
      !report.abnormal_probability.has_value()) {
    fail("gradable report lacks an abnormality probability");
  }
  if (!diseased && (report.disease || report.disease_posterior ||
                    !report.evidence.empty())) {
    fail("non-Diseased report carries diagnosis fields");
  }
  if (diseased && (!report.disease || !report.disease_posterior)) {
    fail("Diseased report lacks its diagnosis");
  }
  if (diseased && *report.disease == DiseaseLabel::kNormal) {
    fail("Diseased report names Normal as its disease");
  }
  for (const auto& s : report.slices) {
    if (!diseased && s.disease_posterior) {
      fail("slice disease posterior outside a Diseased report");
    }
    if (report.status == ReportStatus::kUngradable && s.p_abnormal) {
      fail("slice abnormality probability in an Ungradable report");
    }
  }
  if (report.evidence.size() > evidence_top_k) fail("too many evidence entries");
  for (std::size_t i = 1; i < report.evidence.size(); ++i) {
    if (report.evidence[i].weight > report.evidence[i - 1].weight) {
      fail("evidence weights are not sorted in descending order");
    }
  }
  if (!(report.gradable_fraction >= 0.0 && report.gradable_fraction <= 1.0)) {
    fail("gradable_fraction outside [0, 1]");
  }
}

json report_to_json(const PipelineReport& report) {
  json evidence = json::array();
  for (const auto& e : report.evidence) {
    evidence.push_back(
        {{"slice", e.slice}, {"weight", e.weight}, {"certainty", e.certainty}});
  }
  json slices = json::array();
  for (const auto& s : report.slices) {
    json item = {{"index", s.index},
                 {"p_ungradable", s.p_ungradable},
                 {"gradable", s.gradable}};
    if (s.p_abnormal) item["p_abnormal"] = *s.p_abnormal;
    if (s.disease_posterior) item["disease_posterior"] = *s.disease_posterior;
    slices.push_back(std::move(item));
  }
  json j = {
      {"schema_version", kReportSchemaVersion},
      {"patient_id", report.patient_id},
      {"center_id", report.center_id},
      {"status", report_status_name(report.status)},
      {"gradable_fraction", report.gradable_fraction},
      {"reason", optional_json(report.reason)},
      {"abnormal_probability", optional_json(report.abnormal_probability)},
      {"disease", report.disease ? json(disease_name(*report.disease)) : json(nullptr)},
      {"disease_posterior", optional_json(report.disease_posterior)},
      {"evidence", std::move(evidence)},
      {"slices", std::move(slices)},
      {"model_versions", report.model_versions},
      {"timings_ms", report.timings_ms},
  };
  return j;
}

PipelineReport report_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
      throw FormatError("unsupported report schema_version");
    }
    PipelineReport r;
    r.patient_id = j.at("patient_id").get<std::string>();
    r.center_id = j.at("center_id").get<std::string>();
    r.status = parse_report_status(j.at("status").get<std::string>());
    r.gradable_fraction = j.at("gradable_fraction").get<double>();
    if (!j.at("reason").is_null()) r.reason = j["reason"].get<std::string>();
    if (!j.at("abnormal_probability").is_null()) {
      r.abnormal_probability = j["abnormal_probability"].get<double>();
    }
    if (!j.at("disease").is_null()) {
      const auto d = parse_disease(j["disease"].get<std::string>());
      if (!d) throw FormatError("unknown disease in report");
      r.disease = *d;
    }
    if (!j.at("disease_posterior").is_null()) {
      r.disease_posterior = j["disease_posterior"].get<Vec>();
    }
    for (const auto& e : j.at("evidence")) {
      r.evidence.push_back({e.at("slice").get<std::size_t>(),
                            e.at("weight").get<double>(),
                            e.at("certainty").get<double>()});
    }
    for (const auto& s : j.at("slices")) {
      SliceReport slice;
      slice.index = s.at("index").get<std::size_t>();
      slice.p_ungradable = s.at("p_ungradable").get<double>();
      slice.gradable = s.at("gradable").get<bool>();
      if (s.contains("p_abnormal")) slice.p_abnormal = s["p_abnormal"].get<double>();
      if (s.contains("disease_posterior")) {
        slice.disease_posterior = s["disease_posterior"].get<Vec>();
      }
      r.slices.push_back(std::move(slice));
    }
    r.model_versions =
        j.at("model_versions").get<std::map<std::string, std::string>>();
    r.timings_ms = j.at("timings_ms").get<std::map<std::string, double>>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

PipelineReport run_pipeline(const VolumeBag& volume, const PipelineModels& models,
                            const PipelineConfig& config) {
  const std::size_t n = volume.slices.size();
  if (n == 0) throw ValidationError("patient " + volume.patient_id + " has no slices");
  PipelineReport report;
  report.patient_id = volume.patient_id;
  report.center_id = volume.center_id;
  report.model_versions = models.versions;
  report.slices.resize(n);

  // Stage 1: per-slice quality gate.
  auto start = Clock::now();
  const StagePrediction quality = infer_stage(models.quality, volume.slices);
  std::vector<std::size_t> kept;
  std::size_t gradable = 0;
  for (std::size_t i = 0; i < n; ++i) {
    SliceReport& s = report.slices[i];
    s.index = i;
    s.p_ungradable = quality.slice_posteriors[i][1];
    s.gradable = s.p_ungradable < models.quality.decision_threshold();
    if (s.gradable) ++gradable;
    if (s.gradable || !config.drop_ungradable_slices) kept.push_back(i);
  }
  report.gradable_fraction = static_cast<double>(gradable) / static_cast<double>(n);
  report.timings_ms["quality"] = elapsed_ms(start);
  if (report.gradable_fraction < config.gradable_fraction_threshold) {
    report.status = ReportStatus::kUngradable;
    report.reason = "gradable fraction below threshold";
    return report;
  }
  if (kept.empty()) {
    report.status = ReportStatus::kUngradable;
    report.reason = "no gradable slices";
    return report;
  }
  std::vector<Vec> surviving;
  surviving.reserve(kept.size());
  for (std::size_t i : kept) surviving.push_back(volume.slices[i].values);

  // Stage 2: abnormality triage.
  start = Clock::now();
  const StagePrediction abnormal = infer_stage(models.abnormal, surviving);
  for (std::size_t k = 0; k < kept.size(); ++k) {
    report.slices[kept[k]].p_abnormal = abnormal.slice_posteriors[k][1];
  }
  report.abnormal_probability = (*abnormal.patient_posterior)[1];
  report.timings_ms["abnormal"] = elapsed_ms(start);
  if (*report.abnormal_probability < config.abnormal_threshold) {
    report.status = ReportStatus::kNormal;
    return report;
  }

  // Stage 3: disease diagnosis. Normal (index 0) was ruled out by stage 2.
  start = Clock::now();
  const StagePrediction disease = infer_stage(models.disease, surviving);
  const Vec& posterior = *disease.patient_posterior;
  std::size_t best = 1;
  for (std::size_t k = 2; k < posterior.size(); ++k) {
    if (posterior[k] > posterior[best]) best = k;
  }
  report.status = ReportStatus::kDiseased;
  report.disease = disease_from_index(static_cast<int>(best));
  report.disease_posterior = posterior;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    report.slices[kept[k]].disease_posterior = disease.slice_posteriors[k];
  }
  const AggregationResult& agg = *disease.aggregation;
  std::vector<std::size_t> order(kept.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return agg.weights[a] > agg.weights[b];
  });
  const std::size_t top = std::min(config.evidence_top_k, order.size());
  for (std::size_t r = 0; r < top; ++r) {
    const std::size_t k = order[r];
    report.evidence.push_back({kept[k], agg.weights[k], agg.certainties[k]});
  }
  report.timings_ms["disease"] = elapsed_ms(start);
  return report;
}

json BatchSummary::to_json() const {
  json failures_json = json::array();
  for (const auto& f : failures) {
    failures_json.push_back({{"patient_id", f.patient_id}, {"error", f.error}});
  }
  std::size_t reported = 0;
  for (const auto& [status, count] : status_counts) reported += count;
  return {
      {"schema_version", kReportSchemaVersion},
      {"n_input", n_input},
      {"n_reports", reported},
      {"status_counts", status_counts},
      {"failures", std::move(failures_json)},
      {"mean_latency_ms", mean_latency_ms},
      {"model_versions", model_versions},
  };
}

BatchSummary run_batch(const std::filesystem::path& manifest_path,
                       const PipelineModels& models, const PipelineConfig& config,
                       const std::filesystem::path& out_dir,
                       const BatchOptions& options) {
  validate_pipeline_config(config);
  const Manifest manifest = read_manifest(manifest_path);
  std::vector<const ManifestEntry*> entries;
  for (const auto& entry : manifest.volumes) {
    if (!options.split || entry.split == *options.split) entries.push_back(&entry);
  }
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry* a, const ManifestEntry* b) {
              return a->patient_id < b->patient_id;
            });

  const auto report_dir = out_dir / "reports";
  std::error_code ec;
  std::filesystem::create_directories(report_dir, ec);
  if (ec) throw IoError("cannot create " + report_dir.string() + ": " + ec.message());

  struct Outcome {
    std::optional<PipelineReport> report;
    std::string error;
  };
  std::vector<Outcome> outcomes(entries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      const ManifestEntry& entry = *entries[i];
      try {
        const VolumeBag bag = load_volume(manifest, entry);
        PipelineReport report = run_pipeline(bag, models, config);
        check_report_invariants(report, config.evidence_top_k);
        write_file(report_dir / (entry.patient_id + ".json"),
                   report_to_json(report).dump(2) + "\n");
        outcomes[i].report = std::move(report);
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, options.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  BatchSummary summary;
  summary.n_input = entries.size();
  summary.model_versions = models.versions;
  for (auto status : {ReportStatus::kUngradable, ReportStatus::kNormal,
                      ReportStatus::kDiseased}) {
    summary.status_counts[report_status_name(status)] = 0;
  }
  std::map<std::string, double> latency_total;
  std::map<std::string, std::size_t> latency_count;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!outcomes[i].report) {
      summary.failures.push_back({entries[i]->patient_id, outcomes[i].error});
      continue;
    }
    const PipelineReport& r = *outcomes[i].report;
    ++summary.status_counts[report_status_name(r.status)];
    for (const auto& [stage, ms] : r.timings_ms) {
      latency_total[stage] += ms;
      ++latency_count[stage];
    }
  }
  for (const auto& [stage, total] : latency_total) {
    summary.mean_latency_ms[stage] =
        total / static_cast<double>(latency_count[stage]);
  }
  write_file(out_dir / "summary.json", summary.to_json().dump(2) + "\n");
  return summary;
}

}  // namespace focuskit

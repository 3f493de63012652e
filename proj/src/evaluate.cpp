#include "focuskit/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "focuskit/error.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/tensor_io.hpp"

namespace focuskit {

using nlohmann::json;

namespace {

std::uint64_t name_stream(const std::string& name) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(
      std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

struct Collector {
  std::vector<std::size_t> truth;
  std::vector<std::size_t> pred;
  std::vector<std::vector<double>> scores;

  void add(std::size_t t, std::size_t p, std::vector<double> s) {
    truth.push_back(t);
    pred.push_back(p);
    scores.push_back(std::move(s));
  }
};

std::vector<double> patient_disease_scores(const PipelineReport& r) {
  const double p_abnormal = *r.abnormal_probability;
  std::vector<double> scores(kNumDiseaseClasses, p_abnormal / kNumDiseases);
  scores[0] = 1.0 - p_abnormal;
  if (r.disease_posterior) {
    const auto& q = *r.disease_posterior;
    double mass = 0.0;
    for (int k = 1; k < kNumDiseaseClasses; ++k) mass += q[k];
    if (mass > 0.0) {
      for (int k = 1; k < kNumDiseaseClasses; ++k) {
        scores[k] = p_abnormal * q[k] / mass;
      }
    }
  }
  return scores;
}

EvalGroup evaluate_group(const std::string& group,
                         const std::vector<const PipelineReport*>& reports,
                         const std::vector<const ManifestEntry*>& truths,
                         const EvalOptions& options) {
  EvalGroup out;
  out.group = group;
  Collector quality, abnormal_patient, abnormal_slice, disease_patient,
      disease_slice;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const PipelineReport& r = *reports[i];
    const ManifestEntry& t = *truths[i];
    ++out.gradability.total;
    for (const SliceReport& s : r.slices) {
      const std::size_t truth =
          t.slice_quality[s.index] == QualityLabel::kUngradable ? 1 : 0;
      quality.add(truth, s.gradable ? 0 : 1, {1.0 - s.p_ungradable, s.p_ungradable});
    }
    if (r.status == ReportStatus::kUngradable) {
      ++out.gradability.ungradable;
      continue;
    }
    (r.status == ReportStatus::kNormal ? out.gradability.normal
                                       : out.gradability.diseased)++;
    const double p_abnormal = *r.abnormal_probability;
    const std::size_t patient_truth = t.disease == DiseaseLabel::kNormal ? 0 : 1;
    abnormal_patient.add(patient_truth, r.status == ReportStatus::kNormal ? 0 : 1,
                         {1.0 - p_abnormal, p_abnormal});
    const std::size_t disease_truth = static_cast<std::size_t>(index_of(t.disease));
    const std::size_t disease_pred =
        r.disease ? static_cast<std::size_t>(index_of(*r.disease)) : 0;
    disease_patient.add(disease_truth, disease_pred, patient_disease_scores(r));
    for (const SliceReport& s : r.slices) {
      const bool abnormal = t.slice_abnormal[s.index];
      if (s.p_abnormal) {
        abnormal_slice.add(abnormal ? 1 : 0, *s.p_abnormal >= 0.5 ? 1 : 0,
                           {1.0 - *s.p_abnormal, *s.p_abnormal});
      }
      if (s.disease_posterior) {
        disease_slice.add(abnormal ? disease_truth : 0, argmax(*s.disease_posterior),
                          *s.disease_posterior);
      }
    }
  }
  auto emit = [&](const std::string& name, const Collector& c, std::size_t k) {
    if (c.truth.empty()) return;
    out.summaries.emplace(name, summarize(name, c.truth, c.pred, c.scores, k, options));
  };
  emit("quality/slice", quality, 2);
  emit("abnormal/patient", abnormal_patient, 2);
  emit("abnormal/slice", abnormal_slice, 2);
  emit("disease/patient", disease_patient, kNumDiseaseClasses);
  emit("disease/slice", disease_slice, kNumDiseaseClasses);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

json optional_number(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

}  // namespace

EvalSummary summarize(const std::string& name, std::span<const std::size_t> truth,
                      std::span<const std::size_t> pred,
                      std::span<const std::vector<double>> scores,
                      std::size_t n_classes, const EvalOptions& options) {
  EvalSummary s;
  s.name = name;
  s.metrics = confusion_and_f1(truth, pred, n_classes);
  s.class_auc = one_vs_rest_auc(truth, scores, n_classes);
  std::vector<int> binary(truth.size());
  std::vector<double> column(truth.size());
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (!s.class_auc[k] || (n_classes == 2 && k == 0)) continue;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      binary[i] = truth[i] == k ? 1 : 0;
      column[i] = scores[i][k];
    }
    s.roc[k] = roc_curve(binary, column);
  }
  if (n_classes == 2) {
    s.macro_auc = s.class_auc[1];
  } else {
    double total = 0.0;
    std::size_t defined = 0;
    for (const auto& auc : s.class_auc) {
      if (auc) {
        total += *auc;
        ++defined;
      }
    }
    if (defined > 0) s.macro_auc = total / static_cast<double>(defined);
  }
  if (truth.size() >= 10) {
    s.macro_f1_ci = bootstrap_macro_f1_ci(truth, pred, n_classes,
                                          options.bootstrap_resamples,
                                          mix_seed(options.seed, name_stream(name)));
  }
  return s;
}

GroupBy parse_group_by(const std::string& name) {
  if (name == "all") return GroupBy::kAll;
  if (name == "center") return GroupBy::kCenter;
  throw SpecError("unknown group_by '" + name + "' (expected all or center)");
}

EvalReport evaluate_run(std::span<const PipelineReport> reports,
                        const Manifest& truth, GroupBy group_by,
                        const EvalOptions& options) {
  std::vector<const PipelineReport*> all_reports;
  std::vector<const ManifestEntry*> all_truths;
  for (const PipelineReport& r : reports) {
    const ManifestEntry* t = truth.find(r.patient_id);
    if (t == nullptr) {
      throw UnmatchedError("report " + r.patient_id + " has no truth record");
    }
    if (t->slice_quality.size() != r.slices.size()) {
      throw UnmatchedError("report " + r.patient_id + " covers " +
                           std::to_string(r.slices.size()) +
                           " slices, truth has " +
                           std::to_string(t->slice_quality.size()));
    }
    for (const SliceReport& s : r.slices) {
      if (s.index >= t->slice_quality.size()) {
        throw UnmatchedError("report " + r.patient_id + " slice index out of range");
      }
    }
    all_reports.push_back(&r);
    all_truths.push_back(t);
  }
  EvalReport out;
  out.overall = evaluate_group("all", all_reports, all_truths, options);
  if (group_by == GroupBy::kCenter) {
    std::map<std::string, std::pair<std::vector<const PipelineReport*>,
                                    std::vector<const ManifestEntry*>>>
        by_center;
    for (std::size_t i = 0; i < all_reports.size(); ++i) {
      auto& slot = by_center[all_truths[i]->center_id];
      slot.first.push_back(all_reports[i]);
      slot.second.push_back(all_truths[i]);
    }
    for (const auto& [center, members] : by_center) {
      out.per_center.push_back(
          evaluate_group(center, members.first, members.second, options));
    }
  }
  return out;
}

std::vector<PipelineReport> read_reports(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("report directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& item : std::filesystem::directory_iterator(dir)) {
    if (item.is_regular_file() && item.path().extension() == ".json") {
      files.push_back(item.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<PipelineReport> reports;
  for (const auto& file : files) {
    try {
      reports.push_back(report_from_json(json::parse(read_file(file))));
    } catch (const json::exception& e) {
      throw FormatError(file.string() + ": " + e.what());
    }
  }
  return reports;
}

json eval_summary_to_json(const EvalSummary& s) {
  const auto& m = s.metrics;
  json per_class = json::array();
  for (std::size_t k = 0; k < m.n_classes; ++k) {
    per_class.push_back({{"class", k},
                         {"precision", m.precision[k]},
                         {"recall", m.recall[k]},
                         {"f1", m.f1[k]},
                         {"support", m.support[k]},
                         {"auc", optional_number(s.class_auc[k])}});
  }
  json ci = nullptr;
  if (s.macro_f1_ci) {
    ci = {{"lower", s.macro_f1_ci->lower},
          {"upper", s.macro_f1_ci->upper},
          {"resamples", s.macro_f1_ci->resamples},
          {"skipped", s.macro_f1_ci->skipped},
          {"method", "percentile"}};
  }
  return {{"name", s.name},
          {"n", m.n},
          {"f1_averaging", "macro"},
          {"macro_f1", m.macro_f1},
          {"macro_f1_ci95", std::move(ci)},
          {"macro_auc", optional_number(s.macro_auc)},
          {"confusion_matrix", m.confusion},
          {"per_class", std::move(per_class)}};
}

namespace {

json group_to_json(const EvalGroup& g) {
  json summaries = json::object();
  for (const auto& [name, s] : g.summaries) summaries[name] = eval_summary_to_json(s);
  return {{"group", g.group},
          {"gradability",
           {{"total", g.gradability.total},
            {"Ungradable", g.gradability.ungradable},
            {"Normal", g.gradability.normal},
            {"Diseased", g.gradability.diseased}}},
          {"summaries", std::move(summaries)}};
}

}  // namespace

json eval_report_to_json(const EvalReport& report) {
  json centers = json::array();
  for (const auto& g : report.per_center) centers.push_back(group_to_json(g));
  return {{"schema_version", 1},
          {"overall", group_to_json(report.overall)},
          {"per_center", std::move(centers)}};
}

void write_eval_outputs(const EvalReport& report,
                        const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_file(out_dir / "eval_summary.json",
             eval_report_to_json(report).dump(2) + "\n");

  std::ostringstream per_class;
  std::ostringstream roc;
  per_class << "group,summary,class,precision,recall,f1,support,auc\n";
  roc << "group,summary,class,fpr,tpr,threshold\n";
  std::vector<const EvalGroup*> groups = {&report.overall};
  for (const auto& g : report.per_center) groups.push_back(&g);
  for (const EvalGroup* g : groups) {
    for (const auto& [name, s] : g->summaries) {
      for (std::size_t k = 0; k < s.metrics.n_classes; ++k) {
        per_class << g->group << ',' << name << ',' << k << ','
                  << fmt(s.metrics.precision[k]) << ',' << fmt(s.metrics.recall[k])
                  << ',' << fmt(s.metrics.f1[k]) << ',' << s.metrics.support[k]
                  << ',' << (s.class_auc[k] ? fmt(*s.class_auc[k]) : "") << '\n';
      }
      for (const auto& [k, points] : s.roc) {
        for (const RocPoint& p : points) {
          roc << g->group << ',' << name << ',' << k << ',' << fmt(p.fpr) << ','
              << fmt(p.tpr) << ','
              << (std::isfinite(p.threshold) ? fmt(p.threshold) : "inf") << '\n';
        }
      }
    }
  }
  write_file(out_dir / "per_class.csv", per_class.str());
  write_file(out_dir / "roc.csv", roc.str());
}

std::vector<AblationRow> ablation_aggregators(const Cohort& cohort,
                                              std::span<const PoolKind> kinds,
                                              const AblationConfig& config) {
  if (config.task == StageTask::kQuality) {
    throw SpecError("ablation needs a patient-level task");
  }
  const auto test = cohort.in_split(Split::kTest);
  std::vector<AblationRow> rows;
  for (PoolKind kind : kinds) {
    AggregatorSpec agg = config.aggregator;
    agg.kind = kind;
    const TrainResult trained = train_patient_stage(
        cohort, config.task, config.encoder, agg, config.train, config.shared_encoder);
    std::vector<std::size_t> truth;
    std::vector<std::size_t> pred;
    std::vector<std::vector<double>> scores;
    for (const VolumeBag* bag : test) {
      std::vector<nn::Vec> slices;
      for (std::size_t s = 0; s < bag->size(); ++s) {
        if (bag->slice_quality[s] == QualityLabel::kGradable) {
          slices.push_back(bag->slices[s].values);
        }
      }
      if (slices.empty()) continue;
      const StagePrediction p = infer_stage(trained.model, slices);
      truth.push_back(patient_target(*bag, config.task));
      pred.push_back(argmax(*p.patient_posterior));
      scores.push_back(*p.patient_posterior);
    }
    if (truth.empty()) throw DegenerateDataError("ablation: empty test split");
    const std::size_t k = stage_class_count(config.task);
    const auto metrics = confusion_and_f1(truth, pred, k);
    const auto aucs = one_vs_rest_auc(truth, scores, k);
    AblationRow row;
    row.kind = kind;
    row.macro_f1 = metrics.macro_f1;
    if (k == 2) {
      if (!aucs[1]) throw DegenerateDataError("ablation: test split has one class");
      row.patient_auc = *aucs[1];
    } else {
      double total = 0.0;
      std::size_t defined = 0;
      for (const auto& a : aucs) {
        if (a) {
          total += *a;
          ++defined;
        }
      }
      row.patient_auc = defined ? total / static_cast<double>(defined) : 0.0;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << "kind,patient_auc,macro_f1\n";
  for (const auto& r : rows) {
    out << pool_kind_name(r.kind) << ',' << fmt(r.patient_auc) << ','
        << fmt(r.macro_f1) << '\n';
  }
  return out.str();
}

}  // namespace focuskit

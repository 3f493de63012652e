#include "focuskit/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "focuskit/config.hpp"
#include "focuskit/error.hpp"
#include "focuskit/evaluate.hpp"
#include "focuskit/metrics.hpp"
#include "focuskit/pipeline.hpp"
#include "focuskit/stages.hpp"
#include "focuskit/synthgen.hpp"
#include "focuskit/tensor_io.hpp"

namespace focuskit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig config =
      args.config.empty() ? default_run_config() : read_run_config(args.config);
  apply_seed_override(config);
  if (args.seed) {
    config.seed = *args.seed;
    resolve_seeds(config);
  }
  return config;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_provenance(const fs::path& dir, const RunConfig& config,
                      const std::string& command) {
  write_file(dir / "provenance.json", provenance_json(config, command).dump(2) + "\n");
}

// A data argument may name the manifest or the directory holding it.
fs::path manifest_path(const fs::path& data) {
  return fs::is_directory(data) ? data / "manifest.json" : data;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string maybe(const std::optional<double>& v) {
  return v ? fixed(*v) : std::string("n/a");
}

std::size_t argmax(const nn::Vec& v) {
  return static_cast<std::size_t>(
      std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

// Headline validation metric of a freshly trained stage: slice AUC for the
// quality stage, patient AUC for abnormality, patient macro-F1 for disease.
std::string val_metric(const StageModel& model, const Cohort& cohort) {
  const auto val = cohort.in_split(Split::kVal);
  std::vector<int> binary;
  std::vector<double> scores;
  std::vector<std::size_t> truth;
  std::vector<std::size_t> pred;
  for (const VolumeBag* bag : val) {
    if (model.task() == StageTask::kQuality) {
      const StagePrediction p = infer_stage(model, bag->slices);
      for (std::size_t s = 0; s < bag->size(); ++s) {
        binary.push_back(bag->slice_quality[s] == QualityLabel::kUngradable ? 1 : 0);
        scores.push_back(p.slice_posteriors[s][1]);
      }
      continue;
    }
    std::vector<nn::Vec> slices;
    for (std::size_t s = 0; s < bag->size(); ++s) {
      if (bag->slice_quality[s] == QualityLabel::kGradable) {
        slices.push_back(bag->slices[s].values);
      }
    }
    if (slices.empty()) continue;
    const StagePrediction p = infer_stage(model, slices);
    const std::size_t t = patient_target(*bag, model.task());
    binary.push_back(t == 1 ? 1 : 0);
    scores.push_back((*p.patient_posterior)[std::min<std::size_t>(1, p.patient_posterior->size() - 1)]);
    truth.push_back(t);
    pred.push_back(argmax(*p.patient_posterior));
  }
  if (model.task() == StageTask::kDisease) {
    if (truth.empty()) return "val_macro_f1=n/a";
    return "val_macro_f1=" +
           fixed(confusion_and_f1(truth, pred, model.n_classes()).macro_f1);
  }
  const auto positives = std::count(binary.begin(), binary.end(), 1);
  if (positives == 0 || positives == static_cast<long>(binary.size())) {
    return "val_auc=n/a";
  }
  return "val_auc=" + fixed(roc_auc(binary, scores));
}

void write_history(const fs::path& path, const std::vector<EpochStats>& history) {
  std::ostringstream csv;
  csv << "epoch,train_loss,val_loss\n";
  for (const auto& h : history) {
    csv << h.epoch << ',' << fixed(h.train_loss, 8) << ',' << fixed(h.val_loss, 8)
        << '\n';
  }
  write_file(path, csv.str());
}

void report_stage(std::ostream& out, const TrainResult& result, const Cohort& cohort,
                  const std::string& checksum) {
  const auto& last = result.history.back();
  out << stage_task_name(result.model.task()) << ": epochs=" << result.history.size()
      << " train_loss=" << fixed(last.train_loss) << " val_loss=" << fixed(last.val_loss)
      << ' ' << val_metric(result.model, cohort) << " checksum=" << checksum << '\n';
}

int cmd_generate(const CommonArgs& common, const std::string& out_dir,
                 std::ostream& out) {
  const RunConfig config = load_config(common);
  const Manifest manifest = gen_cohort(config.synth, out_dir);
  write_provenance(out_dir, config, "generate");
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& v : manifest.volumes) ++counts[static_cast<int>(v.split)];
  out << "generated " << manifest.volumes.size() << " volumes (train " << counts[0]
      << ", val " << counts[1] << ", test " << counts[2] << ") in " << out_dir
      << " config_hash=" << config_hash(config) << '\n';
  return kExitOk;
}

int cmd_train(const CommonArgs& common, const std::string& data,
              const std::string& stage, const std::string& out_dir, std::ostream& out) {
  const RunConfig config = load_config(common);
  if (stage != "all" && stage != "quality" && stage != "abnormal" && stage != "disease") {
    throw SpecError("--stage must be quality, abnormal, disease or all");
  }
  const Cohort cohort = load_cohort(manifest_path(data));
  make_dir(out_dir);
  write_provenance(out_dir, config, "train");
  const auto& t = config.train;
  auto finish = [&](const TrainResult& result) {
    const std::string checksum = save_stage(result.model, out_dir);
    write_history(fs::path(out_dir) / (stage_file_stem(result.model.task()) +
                                       "_history.csv"),
                  result.history);
    report_stage(out, result, cohort, checksum);
  };
  if (stage == "all" || stage == "quality") {
    finish(train_quality(cohort, t.quality.encoder, t.quality.train));
  }
  // With a shared encoder the disease stage trains first, is refit over its
  // own slice posteriors, and lends that encoder to the abnormality stage.
  std::optional<StageModel> disease;
  if (stage == "all" || stage == "disease") {
    TrainResult result = train_patient_stage(cohort, StageTask::kDisease,
                                             t.disease.encoder, config.aggregator,
                                             t.disease.train);
    if (t.shared_encoder) {
      const PosteriorEncoder posterior = posterior_encoder(result.model);
      TrainConfig refit = t.disease.train;
      refit.freeze_encoder = true;
      result = train_patient_stage(cohort, StageTask::kDisease, posterior.spec,
                                   config.aggregator, refit, &posterior.encoder);
    }
    finish(result);
    disease = std::move(result.model);
  }
  if (stage == "all" || stage == "abnormal") {
    if (t.shared_encoder && !disease) {
      disease = load_stage(out_dir, StageTask::kDisease).model;
    }
    if (t.shared_encoder) {
      finish(train_patient_stage(cohort, StageTask::kAbnormality,
                                 disease->encoder_spec(), config.aggregator,
                                 t.abnormal.train, &disease->encoder()));
    } else {
      finish(train_patient_stage(cohort, StageTask::kAbnormality, t.abnormal.encoder,
                                 config.aggregator, t.abnormal.train));
    }
  }
  return kExitOk;
}

int cmd_infer(const CommonArgs& common, const std::string& models_dir,
              const std::string& data, const std::string& out_dir,
              const std::string& split, std::size_t threads, std::ostream& out) {
  const RunConfig config = load_config(common);
  BatchOptions options;
  options.threads = threads;
  if (threads == 0) throw SpecError("--threads must be >= 1");
  if (split != "all") {
    const auto parsed = parse_split(split);
    if (!parsed) throw SpecError("--split must be train, val, test or all");
    options.split = *parsed;
  }
  const PipelineModels models = PipelineModels::load(models_dir);
  make_dir(out_dir);
  const BatchSummary summary =
      run_batch(manifest_path(data), models, config.pipeline, out_dir, options);
  write_provenance(out_dir, config, "infer");
  out << "processed " << summary.n_input << " volumes:";
  for (const auto& [status, count] : summary.status_counts) {
    out << ' ' << status << '=' << count;
  }
  out << " failures=" << summary.failures.size() << '\n';
  for (const auto& f : summary.failures) {
    out << "  failed " << f.patient_id << ": " << f.error << '\n';
  }
  return kExitOk;
}

void print_group(std::ostream& out, const EvalGroup& g) {
  out << "[" << g.group << "] total=" << g.gradability.total
      << " Ungradable=" << g.gradability.ungradable
      << " Normal=" << g.gradability.normal
      << " Diseased=" << g.gradability.diseased << '\n';
  for (const auto& [name, s] : g.summaries) {
    out << "  " << name << ": n=" << s.metrics.n
        << " macro_f1=" << fixed(s.metrics.macro_f1)
        << " macro_auc=" << maybe(s.macro_auc);
    if (s.macro_f1_ci) {
      out << " macro_f1_ci95=[" << fixed(s.macro_f1_ci->lower) << ", "
          << fixed(s.macro_f1_ci->upper) << "]";
    }
    out << '\n';
  }
}

int cmd_eval(const CommonArgs& common, const std::string& reports_arg,
             const std::string& truth, const std::string& group_by,
             const std::string& out_arg, std::ostream& out) {
  RunConfig config = load_config(common);
  if (!group_by.empty()) config.eval.group_by = parse_group_by(group_by);
  fs::path reports_dir = reports_arg;
  if (fs::is_directory(reports_dir / "reports")) reports_dir /= "reports";
  const std::vector<PipelineReport> reports = read_reports(reports_dir);
  const Manifest manifest = read_manifest(manifest_path(truth));
  EvalOptions options;
  options.bootstrap_resamples = config.eval.bootstrap_resamples;
  options.seed = config.seed;
  const EvalReport report = evaluate_run(reports, manifest, config.eval.group_by, options);
  const fs::path out_dir =
      out_arg.empty() ? fs::path(reports_arg) / "eval" : fs::path(out_arg);
  write_eval_outputs(report, out_dir);
  write_provenance(out_dir, config, "eval");
  print_group(out, report.overall);
  for (const auto& g : report.per_center) print_group(out, g);
  return kExitOk;
}

int cmd_ablate(const CommonArgs& common, const std::string& data,
               const std::string& task_name, const std::vector<std::string>& kind_names,
               const std::string& out_dir, std::ostream& out) {
  const RunConfig config = load_config(common);
  AblationConfig ablation;
  ablation.task = parse_stage_task(task_name);
  if (ablation.task == StageTask::kQuality) {
    throw SpecError("--task must be abnormal or disease");
  }
  const StageSettings& stage = ablation.task == StageTask::kDisease
                                   ? config.train.disease
                                   : config.train.abnormal;
  ablation.encoder = stage.encoder;
  ablation.aggregator = config.aggregator;
  ablation.train = stage.train;
  ablation.train.freeze_encoder = false;
  std::vector<PoolKind> kinds;
  for (const auto& name : kind_names) kinds.push_back(parse_pool_kind(name));
  const Cohort cohort = data.empty() ? generate_cohort(config.synth)
                                     : load_cohort(manifest_path(data));
  // Abnormality rows share one frozen posterior encoder, as in training.
  std::optional<PosteriorEncoder> posterior;
  if (ablation.task == StageTask::kAbnormality && config.train.shared_encoder) {
    const TrainResult disease =
        train_patient_stage(cohort, StageTask::kDisease, config.train.disease.encoder,
                            config.aggregator, config.train.disease.train);
    posterior = posterior_encoder(disease.model);
    ablation.encoder = posterior->spec;
    ablation.shared_encoder = &posterior->encoder;
    ablation.train.freeze_encoder = true;
  }
  const auto rows = ablation_aggregators(cohort, kinds, ablation);
  make_dir(out_dir);
  write_file(fs::path(out_dir) / "ablation.csv", ablation_csv(rows));
  write_provenance(out_dir, config, "ablate");
  out << ablation_csv(rows);
  return kExitOk;
}

int exit_code_for(const std::exception& e, std::ostream& err) {
  auto fail = [&](int code, const std::string& kind) {
    err << "focuskit: " << kind << ": " << e.what() << '\n';
    return code;
  };
  if (dynamic_cast<const SpecError*>(&e)) return fail(kExitConfig, "invalid config");
  if (dynamic_cast<const IoError*>(&e)) return fail(kExitIo, "i/o error");
  if (dynamic_cast<const FormatError*>(&e)) return fail(kExitIo, "malformed input");
  if (dynamic_cast<const ValidationError*>(&e)) return fail(kExitIo, "invalid input");
  if (dynamic_cast<const TrainingError*>(&e)) return fail(kExitDivergence, "training diverged");
  if (dynamic_cast<const CheckpointError*>(&e)) return fail(kExitCheckpoint, "checkpoint error");
  if (dynamic_cast<const UnmatchedError*>(&e)) return fail(kExitUnmatched, "unmatched patients");
  if (dynamic_cast<const DegenerateDataError*>(&e)) {
    return fail(kExitDegenerate, "degenerate data");
  }
  return fail(kExitUsage, "error");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Three-stage OCT triage pipeline on synthetic cohorts", "focuskit"};
  app.set_version_flag("--version", std::string(FOCUSKIT_VERSION));
  app.require_subcommand(1);

  CommonArgs common;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Run config JSON")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the global seed");
  };

  std::string out_dir;
  std::string data;
  std::string stage = "all";
  std::string models;
  std::string split = "test";
  std::size_t threads = 1;
  std::string reports;
  std::string truth;
  std::string group_by;
  std::string task = "disease";
  std::vector<std::string> kinds = {"mean", "max", "attention", "gated_attention",
                                    "class_query", "uaac"};

  auto* generate = app.add_subcommand("generate", "Write a synthetic cohort");
  add_common(generate);
  generate->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train stage models");
  add_common(train);
  train->add_option("--data", data, "Cohort directory or manifest")->required();
  train->add_option("--stage", stage, "quality, abnormal, disease or all");
  train->add_option("--out", out_dir, "Checkpoint directory")->required();

  auto* infer = app.add_subcommand("infer", "Run the pipeline over a cohort");
  add_common(infer);
  infer->add_option("--models", models, "Checkpoint directory")->required();
  infer->add_option("--data", data, "Cohort directory or manifest")->required();
  infer->add_option("--out", out_dir, "Report directory")->required();
  infer->add_option("--split", split, "train, val, test or all");
  infer->add_option("--threads", threads, "Worker threads");

  auto* eval = app.add_subcommand("eval", "Score pipeline reports");
  add_common(eval);
  eval->add_option("--reports", reports, "Report directory")->required();
  eval->add_option("--truth", truth, "Cohort directory or manifest")->required();
  eval->add_option("--group-by", group_by, "all or center");
  eval->add_option("--out", out_dir, "Output directory (default <reports>/eval)");

  auto* ablate = app.add_subcommand("ablate", "Compare pooling kinds");
  add_common(ablate);
  ablate->add_option("--data", data, "Cohort (generated from the config if absent)");
  ablate->add_option("--task", task, "disease (default) or abnormal");
  ablate->add_option("--kinds", kinds, "Pooling kinds")->delimiter(',');
  ablate->add_option("--out", out_dir, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  for (CLI::App* sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) common.seed = seed;
  }
  try {
    if (generate->parsed()) return cmd_generate(common, out_dir, out);
    if (train->parsed()) return cmd_train(common, data, stage, out_dir, out);
    if (infer->parsed()) {
      return cmd_infer(common, models, data, out_dir, split, threads, out);
    }
    if (eval->parsed()) {
      return cmd_eval(common, reports, truth, group_by, out_dir, out);
    }
    if (ablate->parsed()) return cmd_ablate(common, data, task, kinds, out_dir, out);
  } catch (const std::exception& e) {
    return exit_code_for(e, err);
  }
  return kExitUsage;
}

}  // namespace focuskit

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "focuskit/aggregate.hpp"
#include "focuskit/cli.hpp"
#include "focuskit/cohort.hpp"
#include "focuskit/error.hpp"
#include "focuskit/evaluate.hpp"
#include "focuskit/metrics.hpp"
#include "focuskit/nn.hpp"
#include "focuskit/pipeline.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/stages.hpp"
#include "focuskit/synthgen.hpp"
#include "focuskit/tensor_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace focuskit;
using nlohmann::json;
using nn::Vec;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

class Workspace {
 public:
  Workspace() {
    Rng rng(static_cast<std::uint64_t>(
        std::chrono::steady_clock::now().time_since_epoch().count()));
    root_ = fs::temp_directory_path() /
            ("focuskit_acceptance_" + std::to_string(rng.below(1u << 30)));
    fs::create_directories(root_);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root_, ec);
  }
  fs::path operator/(const std::string& rel) const { return root_ / rel; }

 private:
  fs::path root_;
};

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o;
  std::ostringstream e;
  const int code = run_cli(args, o, e);
  if (out != nullptr) *out = o.str();
  if (code != 0) std::cerr << "  focuskit " << args.front() << ": " << e.str();
  return code;
}

std::vector<Vec> random_bag(Rng& rng, std::size_t n, std::size_t dim, double scale = 1.0) {
  std::vector<Vec> bag(n, Vec(dim));
  for (auto& h : bag) {
    for (double& v : h) v = scale * rng.normal();
  }
  return bag;
}

std::vector<Vec> random_posteriors(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < n; ++i) {
    Vec logits(k);
    for (double& v : logits) v = 3.0 * rng.normal();
    out.push_back(nn::softmax(logits));
  }
  return out;
}

// ---- 1: gradient correctness ----

double check_linear(std::uint64_t seed) {
  Rng rng(seed);
  nn::Linear layer("lin", 5, 3);
  layer.init_glorot(rng);
  const Vec x = random_bag(rng, 1, 5)[0];
  const Vec t = random_bag(rng, 1, 3)[0];
  auto params = layer.params();
  return nn::grad_check(params, [&](bool with_grad) {
           const Vec y = layer.forward(x);
           Vec dy(3);
           double loss = 0.0;
           for (std::size_t j = 0; j < 3; ++j) {
             dy[j] = y[j] - t[j];
             loss += 0.5 * dy[j] * dy[j];
           }
           if (with_grad) {
             Vec dx(5);
             layer.backward(x, dy, dx);
           }
           return loss;
         })
      .max_rel_error;
}

double check_mlp(std::uint64_t seed, nn::Activation hidden, nn::Activation output) {
  Rng rng(seed);
  nn::MlpSpec spec;
  spec.widths = {4, 6, 5, 3};
  spec.hidden = hidden;
  spec.output = output;
  spec.seed = seed;
  nn::Mlp mlp(spec, "mlp");
  const Vec x = random_bag(rng, 1, 4)[0];
  const Vec r = random_bag(rng, 1, 3)[0];
  auto params = mlp.params();
  // Zero biases behind a dead ReLU layer sit exactly on the kink.
  for (nn::Param* p : params) {
    if (p->name.ends_with(".bias")) {
      for (double& v : p->value) v = 0.1 * rng.normal();
    }
  }
  return nn::grad_check(params, [&](bool with_grad) {
           nn::MlpTrace trace;
           const Vec y = mlp.forward(x, with_grad ? &trace : nullptr);
           double loss = 0.0;
           Vec dy(3);
           for (std::size_t j = 0; j < 3; ++j) {
             loss += r[j] * y[j] + 0.5 * y[j] * y[j];
             dy[j] = r[j] + y[j];
           }
           if (with_grad) mlp.backward(trace, dy);
           return loss;
         })
      .max_rel_error;
}

double check_aggregator(std::uint64_t seed, PoolKind kind) {
  Rng rng(seed);
  AggregatorSpec spec;
  spec.kind = kind;
  spec.input_dim = 4;
  spec.hidden_dim = 5;
  spec.n_classes = 3;
  spec.seed = seed;
  Aggregator agg(spec);
  const auto bag = random_bag(rng, 5, 4);
  const auto post = random_posteriors(rng, 5, 3);
  auto params = agg.params();
  if (params.empty()) return 0.0;
  return nn::grad_check(params, [&](bool with_grad) {
           PoolTrace trace;
           const auto r = agg.pool(bag, post, with_grad ? &trace : nullptr);
           double loss = 0.0;
           Vec dz(r.z.size());
           for (std::size_t j = 0; j < dz.size(); ++j) {
             loss += std::sin(r.z[j]) + 0.1 * r.z[j] * r.z[j];
             dz[j] = std::cos(r.z[j]) + 0.2 * r.z[j];
           }
           if (with_grad) agg.backward(trace, dz);
           return loss;
         })
      .max_rel_error;
}

// Full stage model with UAAC pooling. The certainties are a stop-gradient, so
// the finite-difference objective pools with the posteriors of the
// unperturbed model.
double check_stage(std::uint64_t seed, StageTask task) {
  Rng rng(seed);
  EncoderSpec enc;
  enc.hidden = {7};
  enc.embed_dim = 5;
  AggregatorSpec agg;
  agg.hidden_dim = 6;
  StageModel m(task, 4, enc, agg, seed);
  const std::size_t k = m.n_classes();
  const auto slices = random_bag(rng, 6, 4);
  std::vector<std::size_t> labels(6);
  for (auto& l : labels) l = rng.below(k);
  const std::size_t patient = rng.below(k);
  const double lambda = 0.6;

  std::vector<Vec> frozen;
  for (const auto& x : slices) {
    frozen.push_back(nn::softmax(m.slice_head().forward(m.encoder().forward(x))));
  }
  auto fixed_loss = [&]() {
    std::vector<Vec> h;
    double slice = 0.0;
    for (std::size_t i = 0; i < slices.size(); ++i) {
      h.push_back(m.encoder().forward(slices[i]));
      slice += nn::cross_entropy(nn::softmax(m.slice_head().forward(h.back())), labels[i]);
    }
    slice /= static_cast<double>(slices.size());
    const auto pooled = m.aggregator()->pool(h, frozen);
    const Vec p = nn::softmax(m.patient_head()->forward(pooled.z));
    return lambda * slice + (1.0 - lambda) * nn::cross_entropy(p, patient);
  };
  auto params = m.params();
  return nn::grad_check(params, [&](bool with_grad) {
           if (with_grad) {
             return stage_bag_loss(m, slices, labels, patient, lambda, true);
           }
           return fixed_loss();
         })
      .max_rel_error;
}

Outcome criterion_gradients() {
  double worst = 0.0;
  std::string where;
  auto note = [&](double err, const std::string& what) {
    if (!(err <= worst)) {
      worst = err;
      where = what;
    }
  };
  const nn::Activation acts[] = {nn::Activation::kNone, nn::Activation::kReLU,
                                 nn::Activation::kTanh, nn::Activation::kSigmoid};
  const PoolKind kinds[] = {PoolKind::kMean,       PoolKind::kMax,
                            PoolKind::kAttention,  PoolKind::kGatedAttention,
                            PoolKind::kClassQuery, PoolKind::kUAAC};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    note(check_linear(seed), "linear");
    for (auto a : acts) {
      note(check_mlp(seed, a, nn::Activation::kNone), "mlp/" + activation_name(a));
      note(check_mlp(seed, a, a), "mlp/" + activation_name(a) + "+out");
    }
    note(check_mlp(seed, nn::Activation::kTanh, nn::Activation::kSoftmax), "mlp/softmax");
    for (auto kind : kinds) note(check_aggregator(seed, kind), "pool/" + pool_kind_name(kind));
    note(check_stage(seed, StageTask::kAbnormality), "stage/abnormal");
    note(check_stage(seed, StageTask::kDisease), "stage/disease");
  }
  return {worst < 1e-4, "max rel error " + sci(worst) + " (" + where + ")"};
}

// ---- 2: aggregation invariants ----

Outcome criterion_aggregation() {
  Rng rng(2718);
  const PoolKind kinds[] = {PoolKind::kMean,       PoolKind::kMax,
                            PoolKind::kAttention,  PoolKind::kGatedAttention,
                            PoolKind::kClassQuery, PoolKind::kUAAC};
  std::size_t trials = 0;
  std::size_t failures = 0;
  auto fail_if = [&](bool bad) { failures += bad ? 1 : 0; };
  for (int trial = 0; trial < 1200; ++trial) {
    ++trials;
    const PoolKind kind = kinds[trial % 6];
    const std::size_t dim = 1 + rng.below(6);
    const std::size_t n = 1 + rng.below(48);
    AggregatorSpec spec;
    spec.kind = kind;
    spec.input_dim = dim;
    spec.hidden_dim = 1 + rng.below(8);
    spec.n_classes = 2 + rng.below(8);
    spec.seed = static_cast<std::uint64_t>(trial);
    const Aggregator agg(spec);
    const auto bag = random_bag(rng, n, dim, rng.uniform(0.1, 5.0));
    auto post = random_posteriors(rng, n, spec.n_classes);

    // Permutation and normalization.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<Vec> pbag;
    std::vector<Vec> ppost;
    for (std::size_t i : perm) {
      pbag.push_back(bag[i]);
      ppost.push_back(post[i]);
    }
    const auto a = agg.pool(bag, post);
    const auto b = agg.pool(pbag, ppost);
    double zdiff = 0.0;
    for (std::size_t j = 0; j < a.z.size(); ++j) zdiff = std::max(zdiff, std::abs(a.z[j] - b.z[j]));
    fail_if(!(zdiff <= 1e-9));
    const double wsum = std::accumulate(a.weights.begin(), a.weights.end(), 0.0);
    fail_if(!(std::abs(wsum - 1.0) <= 1e-9));

    // n = 1 and identical slices.
    const auto one = agg.pool(std::vector<Vec>{bag[0]}, std::vector<Vec>{post[0]});
    fail_if(one.weights.size() != 1 || std::abs(one.weights[0] - 1.0) > 1e-12);
    for (std::size_t j = 0; j < one.z.size(); ++j) {
      fail_if(std::abs(one.z[j] - bag[0][j % dim]) > 1e-12);
    }
    const std::vector<Vec> same(n, bag[0]);
    const std::vector<Vec> same_post(n, post[0]);
    const auto flat = agg.pool(same, same_post);
    for (double w : flat.weights) fail_if(std::abs(w - 1.0 / static_cast<double>(n)) > 1e-12);

    if (kind == PoolKind::kAttention || kind == PoolKind::kGatedAttention) {
      // UAAC with uncertainty disabled reduces to this attention.
      AggregatorSpec u = spec;
      u.kind = PoolKind::kUAAC;
      u.uncertainty_enabled = false;
      u.gated_scoring = kind == PoolKind::kGatedAttention;
      const auto r = Aggregator(u).pool(bag, post);
      for (std::size_t i = 0; i < n; ++i) fail_if(std::abs(r.weights[i] - a.weights[i]) > 1e-12);
      for (std::size_t j = 0; j < dim; ++j) fail_if(std::abs(r.z[j] - a.z[j]) > 1e-12);
    }
    if (kind == PoolKind::kUAAC && n >= 2) {
      // Sharpening one slice's posterior raises its certainty and weight.
      const std::size_t i = rng.below(n);
      Vec sharp = post[i];
      const std::size_t top =
          static_cast<std::size_t>(std::max_element(sharp.begin(), sharp.end()) - sharp.begin());
      for (std::size_t c = 0; c < sharp.size(); ++c) {
        sharp[c] = c == top ? sharp[c] + 0.5 * (1.0 - sharp[c]) : 0.5 * sharp[c];
      }
      if (certainty(sharp, sharp.size()) > certainty(post[i], post[i].size()) + 1e-12) {
        post[i] = sharp;
        const auto after = agg.pool(bag, post);
        fail_if(!(after.weights[i] > a.weights[i]));
      }
    }
  }
  return {failures == 0 && trials >= 1000,
          std::to_string(trials) + " trials, " + std::to_string(failures) + " violations"};
}

// ---- 3: certainty oracle ----

Outcome criterion_certainty() {
  const double h = -(0.99 * std::log(0.99) + 0.01 * std::log(0.01));
  const double oracle = 1.0 - h / std::log(2.0);
  const double c = certainty(Vec{0.99, 0.01}, 2);
  const double u = certainty(Vec{0.25, 0.25, 0.25, 0.25}, 4);
  const double o = certainty(Vec{0.0, 0.0, 1.0}, 3);
  const bool pass = std::abs(c - 0.9192) <= 1e-3 && std::abs(c - oracle) <= 1e-12 &&
                    std::abs(u) <= 1e-12 && std::abs(o - 1.0) <= 1e-12;
  return {pass, "c([0.99,0.01]) = " + num(c) + ", uniform " + sci(u) + ", one-hot " + num(o, 6)};
}

// ---- 4: metric oracles ----

Outcome criterion_metrics() {
  Rng rng(4444);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.below(2) ? 1 : 0;
      s[i] = static_cast<double>(rng.below(trial % 2 ? 7 : 500));
    }
    y[0] = 0;
    y[1] = 1;
    double hits = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (y[i] != 1 || y[j] != 0) continue;
        pairs += 1.0;
        hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
    if (roc_auc(y, s) != hits / pairs) ++mismatches;
  }
  const double fixture =
      roc_auc(std::vector<int>{0, 0, 1, 1}, std::vector<double>{0.1, 0.4, 0.35, 0.8});
  const std::vector<std::size_t> truth = {1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<std::size_t> pred = {1, 1, 0, 1, 0, 0, 0, 0, 0, 0};
  const double f1 = confusion_and_f1(truth, pred, 2).f1[1];
  const bool pass = mismatches == 0 && fixture == 0.75 && std::abs(f1 - 0.6667) <= 1e-4;
  return {pass, std::to_string(mismatches) + "/100 brute-force mismatches, fixture AUC " +
                    num(fixture, 4) + ", F1 " + num(f1)};
}

// ---- 5, 7, 8, 9: end-to-end run ----

struct EndToEnd {
  bool ok = false;
  double seconds = 0.0;
  json eval;
};

EndToEnd run_end_to_end(const Workspace& ws, const std::string& tag) {
  EndToEnd r;
  const auto start = std::chrono::steady_clock::now();
  const std::string data = (ws / (tag + "/data")).string();
  const std::string models = (ws / (tag + "/models")).string();
  const std::string run = (ws / (tag + "/run")).string();
  r.ok = cli({"generate", "--seed", "42", "--out", data}) == 0 &&
         cli({"train", "--seed", "42", "--data", data, "--out", models}) == 0 &&
         cli({"infer", "--seed", "42", "--models", models, "--data", data, "--out", run}) ==
             0 &&
         cli({"eval", "--seed", "42", "--reports", run, "--truth", data}) == 0;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.ok) r.eval = json::parse(read_file(fs::path(run) / "eval" / "eval_summary.json"));
  return r;
}

double summary_value(const json& eval, const std::string& key, const std::string& field) {
  const json& s = eval["overall"]["summaries"][key];
  if (field == "macro_auc") return s["macro_auc"].get<double>();
  return s["macro_f1"].get<double>();
}

Outcome criterion_benchmark(const EndToEnd& e2e) {
  if (!e2e.ok) return {false, "pipeline run failed"};
  const double q = summary_value(e2e.eval, "quality/slice", "macro_auc");
  const double a = summary_value(e2e.eval, "abnormal/patient", "macro_auc");
  const double f = summary_value(e2e.eval, "disease/patient", "macro_f1");
  const bool pass = q >= 0.95 && a >= 0.97 && f >= 0.90 && e2e.seconds < 300.0;
  return {pass, "quality AUC " + num(q) + " (>= 0.95), abnormal AUC " + num(a) +
                    " (>= 0.97), disease macro-F1 " + num(f) + " (>= 0.90), runtime " +
                    num(e2e.seconds, 1) + " s (< 300)"};
}

std::vector<PipelineReport> load_reports(const fs::path& run) {
  return read_reports(run / "reports");
}

Outcome criterion_evidence(const Workspace& ws) {
  const Manifest truth = read_manifest(ws / "a/data/manifest.json");
  std::size_t correct = 0;
  std::size_t localized = 0;
  for (const auto& r : load_reports(ws / "a/run")) {
    const ManifestEntry* t = truth.find(r.patient_id);
    if (t == nullptr || r.status != ReportStatus::kDiseased || r.disease != t->disease) continue;
    ++correct;
    bool hit = false;
    for (const auto& e : r.evidence) hit = hit || t->slice_abnormal[e.slice];
    localized += hit ? 1 : 0;
  }
  const double rate = correct ? static_cast<double>(localized) / static_cast<double>(correct) : 0.0;
  return {correct > 0 && rate >= 0.90, std::to_string(localized) + "/" +
                                           std::to_string(correct) +
                                           " correctly diagnosed patients localized (" +
                                           num(100.0 * rate, 1) + "% >= 90%)"};
}

Outcome criterion_routing(const Workspace& ws) {
  const PipelineConfig config;
  std::size_t checked = 0;
  std::size_t violations = 0;
  auto check = [&](const PipelineReport& r) {
    ++checked;
    try {
      check_report_invariants(r, config.evidence_top_k);
    } catch (const ValidationError& e) {
      ++violations;
      std::cerr << "  " << e.what() << '\n';
    }
  };
  const auto reports = load_reports(ws / "a/run");
  for (const auto& r : reports) check(r);

  const json summary = json::parse(read_file(ws / "a/run/summary.json"));
  std::size_t counted = 0;
  for (const auto& [status, count] : summary["status_counts"].items()) {
    counted += count.get<std::size_t>();
  }
  const std::size_t failed = summary["failures"].size();
  const bool conserved = counted + failed == summary["n_input"].get<std::size_t>() &&
                         counted == reports.size();

  // Adversarial volumes through the trained models.
  const PipelineModels models = PipelineModels::load(ws / "a/models");
  Rng rng(8);
  auto make = [&](const std::string& id, std::vector<Vec> slices) {
    VolumeBag bag;
    bag.patient_id = id;
    bag.center_id = "X";
    for (auto& s : slices) bag.slices.push_back(SliceFeature{std::move(s)});
    bag.slice_quality.assign(bag.slices.size(), QualityLabel::kGradable);
    bag.slice_abnormal.assign(bag.slices.size(), false);
    return bag;
  };
  std::size_t all_bad_ungradable = 0;
  for (int i = 0; i < 20; ++i) {
    const auto r = run_pipeline(make("bad" + std::to_string(i), random_bag(rng, 32, 16, 3.0)),
                                models, config);
    check(r);
    all_bad_ungradable += r.status == ReportStatus::kUngradable ? 1 : 0;
  }
  const Cohort cohort = load_cohort(ws / "a/data/manifest.json");
  for (const VolumeBag* bag : cohort.in_split(Split::kTest)) {
    check(run_pipeline(make(bag->patient_id + "_one", {bag->slices[0].values}), models, config));
    check(run_pipeline(
        make(bag->patient_id + "_same", std::vector<Vec>(16, bag->slices[1].values)), models,
        config));
  }
  return {violations == 0 && conserved,
          std::to_string(violations) + " invariant violations over " + std::to_string(checked) +
              " reports, counts " + (conserved ? "conserved" : "NOT conserved") + " (" +
              std::to_string(counted) + " + " + std::to_string(failed) + " failures), " +
              std::to_string(all_bad_ungradable) + "/20 noise volumes rejected as Ungradable"};
}

json masked_report(const fs::path& file) {
  json j = json::parse(read_file(file));
  j.erase("timings_ms");
  return j;
}

Outcome criterion_determinism(const Workspace& ws, const EndToEnd& first) {
  const EndToEnd second = run_end_to_end(ws, "b");
  if (!first.ok || !second.ok) return {false, "pipeline run failed"};
  std::size_t compared = 0;
  std::size_t differing = 0;
  for (const auto& entry : fs::directory_iterator(ws / "a/run/reports")) {
    const fs::path other = ws / "b/run/reports" / entry.path().filename();
    ++compared;
    if (!fs::exists(other) ||
        masked_report(entry.path()).dump() != masked_report(other).dump()) {
      ++differing;
    }
  }
  std::size_t extra = 0;
  for (const auto& entry : fs::directory_iterator(ws / "b/run/reports")) {
    extra += fs::exists(ws / "a/run/reports" / entry.path().filename()) ? 0 : 1;
  }
  const bool metrics_same = first.eval.dump() == second.eval.dump();
  std::size_t ckpt_same = 0;
  for (const char* stem : {"quality.ckpt", "abnormal.ckpt", "disease.ckpt"}) {
    ckpt_same += read_file(ws / "a/models" / stem) == read_file(ws / "b/models" / stem) ? 1 : 0;
  }
  const bool pass = differing == 0 && extra == 0 && metrics_same && compared > 0;
  return {pass, std::to_string(compared - differing) + "/" + std::to_string(compared) +
                    " reports identical (timings masked), metrics " +
                    (metrics_same ? "identical" : "DIFFER") + ", " + std::to_string(ckpt_same) +
                    "/3 checkpoints byte-identical"};
}

// ---- 6: sparse-signal ablation ----

Outcome criterion_sparse(const Workspace& ws) {
  const fs::path config = ws / "sparse.json";
  write_file(config, R"({"synth": {"lesion_fraction": 0.05, "slices_per_volume": 40}})");
  std::string detail;
  bool pass = true;
  for (const char* seed : {"42", "7", "1"}) {
    const fs::path out = ws / (std::string("ablate_") + seed);
    std::string csv;
    if (cli({"ablate", "--config", config.string(), "--seed", seed, "--kinds", "mean,uaac",
             "--out", out.string()},
            &csv) != 0) {
      return {false, "ablation failed for seed " + std::string(seed)};
    }
    std::istringstream lines(csv);
    std::string line;
    double mean = NAN;
    double uaac = NAN;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      const double auc = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      if (line.rfind("mean,", 0) == 0) mean = auc;
      if (line.rfind("uaac,", 0) == 0) uaac = auc;
    }
    const bool ok = uaac >= mean + 0.05;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += "seed " + std::string(seed) + ": uaac " + num(uaac, 3) + " vs mean " +
              num(mean, 3) + " (+" + num(uaac - mean, 3) + ")";
  }
  return {pass, detail};
}

}  // namespace

int main() {
  int failed = 0;
  auto run = [&](int id, const std::string& title, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << title << ": "
              << o.detail << " [" << num(s, 1) << " s]" << std::endl;
    failed += o.pass ? 0 : 1;
  };

  Workspace ws;
  run(1, "gradient correctness", [] {
    const auto start = std::chrono::steady_clock::now();
    Outcome o = criterion_gradients();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.pass = o.pass && s < 30.0;
    return o;
  });
  run(2, "aggregation invariants", [] {
    const auto start = std::chrono::steady_clock::now();
    Outcome o = criterion_aggregation();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.pass = o.pass && s < 60.0;
    return o;
  });
  run(3, "certainty oracle", criterion_certainty);
  run(4, "metric oracles", criterion_metrics);
  EndToEnd e2e;
  run(5, "end-to-end synthetic benchmark", [&] {
    e2e = run_end_to_end(ws, "a");
    return criterion_benchmark(e2e);
  });
  run(6, "sparse-signal ablation", [&] { return criterion_sparse(ws); });
  run(7, "evidence localization", [&] { return criterion_evidence(ws); });
  run(8, "pipeline routing soundness", [&] { return criterion_routing(ws); });
  run(9, "determinism", [&] { return criterion_determinism(ws, e2e); });
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}

#include "focuskit/config.hpp"

#include <cstdlib>
#include <set>
#include <type_traits>

#include "focuskit/checkpoint.hpp"
#include "focuskit/error.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/tensor_io.hpp"

namespace focuskit {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object and rejects any it was not asked about.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SpecError(path_ + ": expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), where(key));
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw SpecError("unknown config key '" + where(item.key()) + "'");
      }
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw SpecError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) {
        throw SpecError(where + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw SpecError(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw SpecError(where + ": expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw SpecError(where + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(
            v[i], where + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_encoder(const json& j, const std::string& path, EncoderSpec& encoder) {
  Section s(j, path);
  s.read("hidden", encoder.hidden);
  s.read("embed_dim", encoder.embed_dim);
  std::string activation = nn::activation_name(encoder.activation);
  s.read("activation", activation);
  s.finish();
  try {
    encoder.activation = nn::parse_activation(activation);
  } catch (const Error& e) {
    throw SpecError(path + ".activation: " + e.what());
  }
  if (encoder.embed_dim == 0) throw SpecError(path + ".embed_dim must be positive");
  for (std::size_t w : encoder.hidden) {
    if (w == 0) throw SpecError(path + ".hidden widths must be positive");
  }
}

json encoder_to_json(const EncoderSpec& encoder) {
  std::vector<std::size_t> hidden(encoder.hidden.begin(), encoder.hidden.end());
  return {{"hidden", hidden},
          {"embed_dim", encoder.embed_dim},
          {"activation", nn::activation_name(encoder.activation)}};
}

void read_stage(const json& j, const std::string& path, StageSettings& stage,
                bool patient_stage) {
  Section s(j, path);
  TrainConfig& config = stage.train;
  s.read("epochs", config.epochs);
  s.read("batch_size", config.batch_size);
  s.read("lr", config.lr);
  s.read("weight_decay", config.weight_decay);
  s.read("keep_best", config.keep_best);
  s.read("decision_threshold", config.decision_threshold);
  if (patient_stage) {
    s.read("slice_loss_weight", config.slice_loss_weight);
    s.read("warmup_epochs", config.warmup_epochs);
  }
  if (const json* e = s.child("encoder")) {
    read_encoder(*e, path + ".encoder", stage.encoder);
  }
  s.finish();
  try {
    validate_train_config(config);
  } catch (const SpecError& e) {
    throw SpecError(path + ": " + e.what());
  }
}

json stage_to_json(const StageSettings& stage, bool patient_stage) {
  const TrainConfig& config = stage.train;
  json j = {{"epochs", config.epochs},
            {"batch_size", config.batch_size},
            {"lr", config.lr},
            {"weight_decay", config.weight_decay},
            {"keep_best", config.keep_best},
            {"decision_threshold", config.decision_threshold},
            {"encoder", encoder_to_json(stage.encoder)}};
  if (patient_stage) {
    j["slice_loss_weight"] = config.slice_loss_weight;
    j["warmup_epochs"] = config.warmup_epochs;
  }
  return j;
}

CenterShift read_center(const json& j, const std::string& path, std::size_t dim) {
  Section s(j, path);
  CenterShift c;
  s.read("center_id", c.center_id);
  s.read("feature_scale", c.feature_scale);
  s.read("noise_sigma", c.noise_sigma);
  c.feature_offset.assign(dim, 0.0);
  if (const json* offset = s.child("feature_offset")) {
    if (offset->is_number()) {
      c.feature_offset.assign(dim, offset->get<double>());
    } else {
      c.feature_offset =
          Section::convert<std::vector<double>>(*offset, s.where("feature_offset"));
    }
  }
  s.finish();
  return c;
}

void read_synth(const json& j, CohortSpec& spec) {
  Section s(j, "synth");
  s.read("n_patients", spec.n_patients);
  s.read("slices_per_volume", spec.slices_per_volume);
  s.read("feature_dim", spec.feature_dim);
  s.read("class_prevalence", spec.class_prevalence);
  s.read("lesion_fraction", spec.lesion_fraction);
  s.read("lesion_margin", spec.lesion_margin);
  s.read("ungradable_slice_rate", spec.ungradable_slice_rate);
  s.read("train_frac", spec.train_frac);
  s.read("val_frac", spec.val_frac);
  if (const json* centers = s.child("centers")) {
    if (!centers->is_array()) throw SpecError("synth.centers: expected an array");
    spec.centers.clear();
    for (std::size_t i = 0; i < centers->size(); ++i) {
      spec.centers.push_back(read_center((*centers)[i],
                                         "synth.centers[" + std::to_string(i) + "]",
                                         spec.feature_dim));
    }
  } else {
    // Default offsets are broadcast constants; resize them to the chosen D.
    for (auto& c : spec.centers) {
      c.feature_offset.assign(spec.feature_dim,
                              c.feature_offset.empty() ? 0.0 : c.feature_offset[0]);
    }
  }
  s.finish();
  validate_cohort_spec(spec);
}

void read_aggregator(const json& j, AggregatorSpec& spec) {
  Section s(j, "aggregator");
  std::string kind = pool_kind_name(spec.kind);
  s.read("kind", kind);
  s.read("hidden_dim", spec.hidden_dim);
  s.read("certainty_floor", spec.certainty_floor);
  s.read("uncertainty_enabled", spec.uncertainty_enabled);
  s.read("gated_scoring", spec.gated_scoring);
  s.finish();
  try {
    spec.kind = parse_pool_kind(kind);
  } catch (const Error& e) {
    throw SpecError(std::string("aggregator.kind: ") + e.what());
  }
  // input_dim and n_classes are filled in per stage; check the rest now.
  AggregatorSpec probe = spec;
  probe.input_dim = 1;
  validate_aggregator_spec(probe);
}

void read_pipeline(const json& j, PipelineConfig& config) {
  Section s(j, "pipeline");
  s.read("gradable_fraction_threshold", config.gradable_fraction_threshold);
  s.read("abnormal_threshold", config.abnormal_threshold);
  s.read("evidence_top_k", config.evidence_top_k);
  s.read("drop_ungradable_slices", config.drop_ungradable_slices);
  s.finish();
  validate_pipeline_config(config);
}

void read_eval(const json& j, EvalSettings& eval) {
  Section s(j, "eval");
  s.read("bootstrap_resamples", eval.bootstrap_resamples);
  std::string group_by = eval.group_by == GroupBy::kCenter ? "center" : "all";
  s.read("group_by", group_by);
  s.finish();
  if (eval.bootstrap_resamples == 0) {
    throw SpecError("eval.bootstrap_resamples must be positive");
  }
  eval.group_by = parse_group_by(group_by);
}

}  // namespace

RunConfig default_run_config() {
  RunConfig config;
  config.synth = default_cohort_spec();
  auto& t = config.train;
  t.quality.train.epochs = 30;
  t.quality.train.lr = 0.01;
  t.quality.train.decision_threshold = 0.1;
  t.quality.encoder = {{64}, 16, nn::Activation::kReLU, std::nullopt};
  for (StageSettings* stage : {&t.abnormal, &t.disease}) {
    stage->train.epochs = 60;
    stage->train.lr = 0.01;
    stage->train.slice_loss_weight = 0.8;
    stage->train.warmup_epochs = 10;
    stage->train.weight_decay = 0.1;
    stage->train.keep_best = false;
    stage->encoder = {{}, 16, nn::Activation::kNone, std::nullopt};
  }
  config.aggregator.hidden_dim = 16;
  t.shared_encoder = true;
  resolve_seeds(config);
  return config;
}

RunConfig parse_run_config(const json& j) {
  RunConfig config = default_run_config();
  try {
    Section root(j, "");
    root.read("seed", config.seed);
    root.read("output", config.output);
    if (const json* synth = root.child("synth")) read_synth(*synth, config.synth);
    if (const json* train = root.child("train")) {
      Section s(*train, "train");
      s.read("shared_encoder", config.train.shared_encoder);
      if (const json* q = s.child("quality")) {
        read_stage(*q, "train.quality", config.train.quality, false);
      }
      if (const json* a = s.child("abnormal")) {
        read_stage(*a, "train.abnormal", config.train.abnormal, true);
      }
      if (const json* d = s.child("disease")) {
        read_stage(*d, "train.disease", config.train.disease, true);
      }
      s.finish();
    }
    if (const json* agg = root.child("aggregator")) read_aggregator(*agg, config.aggregator);
    if (const json* p = root.child("pipeline")) read_pipeline(*p, config.pipeline);
    if (const json* e = root.child("eval")) read_eval(*e, config.eval);
    root.finish();
  } catch (const json::exception& e) {
    throw SpecError(std::string("config: ") + e.what());
  }
  if (config.output.empty()) throw SpecError("output must not be empty");
  resolve_seeds(config);
  return config;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const SpecError& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
}

json run_config_to_json(const RunConfig& config) {
  json centers = json::array();
  for (const auto& c : config.synth.centers) {
    centers.push_back({{"center_id", c.center_id},
                       {"feature_scale", c.feature_scale},
                       {"feature_offset", c.feature_offset},
                       {"noise_sigma", c.noise_sigma}});
  }
  const auto& s = config.synth;
  const auto& t = config.train;
  return {
      {"seed", config.seed},
      {"output", config.output},
      {"synth",
       {{"n_patients", s.n_patients},
        {"slices_per_volume", s.slices_per_volume},
        {"feature_dim", s.feature_dim},
        {"class_prevalence", s.class_prevalence},
        {"lesion_fraction", s.lesion_fraction},
        {"lesion_margin", s.lesion_margin},
        {"ungradable_slice_rate", s.ungradable_slice_rate},
        {"train_frac", s.train_frac},
        {"val_frac", s.val_frac},
        {"centers", std::move(centers)}}},
      {"train",
       {{"shared_encoder", t.shared_encoder},
        {"quality", stage_to_json(t.quality, false)},
        {"abnormal", stage_to_json(t.abnormal, true)},
        {"disease", stage_to_json(t.disease, true)}}},
      {"aggregator",
       {{"kind", pool_kind_name(config.aggregator.kind)},
        {"hidden_dim", config.aggregator.hidden_dim},
        {"certainty_floor", config.aggregator.certainty_floor},
        {"uncertainty_enabled", config.aggregator.uncertainty_enabled},
        {"gated_scoring", config.aggregator.gated_scoring}}},
      {"pipeline",
       {{"gradable_fraction_threshold", config.pipeline.gradable_fraction_threshold},
        {"abnormal_threshold", config.pipeline.abnormal_threshold},
        {"evidence_top_k", config.pipeline.evidence_top_k},
        {"drop_ungradable_slices", config.pipeline.drop_ungradable_slices}}},
      {"eval",
       {{"bootstrap_resamples", config.eval.bootstrap_resamples},
        {"group_by", config.eval.group_by == GroupBy::kCenter ? "center" : "all"}}},
  };
}

void resolve_seeds(RunConfig& config) {
  config.synth.seed = config.seed;
  config.train.quality.train.seed = mix_seed(config.seed, 1);
  config.train.abnormal.train.seed = mix_seed(config.seed, 2);
  config.train.disease.train.seed = mix_seed(config.seed, 3);
  config.aggregator.seed = mix_seed(config.seed, 4);
  config.train.abnormal.train.freeze_encoder = config.train.shared_encoder;
}

void apply_seed_override(RunConfig& config) {
  if (const char* env = std::getenv("FOCUSKIT_SEED"); env != nullptr && *env) {
    const std::string text = env;
    std::size_t used = 0;
    unsigned long long value = 0;
    try {
      value = std::stoull(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size() || text[0] == '-') {
      throw SpecError("FOCUSKIT_SEED must be an unsigned integer, got '" + text + "'");
    }
    config.seed = value;
  }
  resolve_seeds(config);
}

std::string config_hash(const RunConfig& config) {
  return fnv1a_hex(run_config_to_json(config).dump());
}

json provenance_json(const RunConfig& config, const std::string& command) {
  return {{"tool", "focuskit"},
          {"version", FOCUSKIT_VERSION},
          {"command", command},
          {"seed", config.seed},
          {"config_hash", config_hash(config)},
          {"config", run_config_to_json(config)}};
}

}  // namespace focuskit

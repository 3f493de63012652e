#include "focuskit/stages.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "focuskit/checkpoint.hpp"
#include "focuskit/error.hpp"
#include "focuskit/rng.hpp"

namespace focuskit {

using nlohmann::json;
using nn::Vec;

namespace {

constexpr int kTopologyVersion = 1;

std::vector<std::size_t> encoder_widths(std::size_t feature_dim,
                                        const EncoderSpec& spec) {
  std::vector<std::size_t> widths = {feature_dim};
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(spec.embed_dim);
  return widths;
}

struct Example {
  const VolumeBag* bag = nullptr;
  std::vector<Vec> slices;
  std::vector<std::size_t> slice_labels;
  std::size_t patient_label = 0;
};

// Quality examples keep every slice; patient-stage examples keep only the
// slices labelled gradable and drop bags left empty.
std::vector<Example> build_examples(const std::vector<const VolumeBag*>& bags,
                                    StageTask task) {
  std::vector<Example> out;
  for (const VolumeBag* bag : bags) {
    Example ex;
    ex.bag = bag;
    for (std::size_t s = 0; s < bag->size(); ++s) {
      if (task != StageTask::kQuality &&
          bag->slice_quality[s] == QualityLabel::kUngradable) {
        continue;
      }
      ex.slices.push_back(bag->slices[s].values);
      ex.slice_labels.push_back(slice_target(*bag, s, task));
    }
    if (ex.slices.empty()) continue;
    ex.patient_label = patient_target(*bag, task);
    out.push_back(std::move(ex));
  }
  return out;
}

void require_two_classes(const std::vector<Example>& examples, StageTask task) {
  std::set<std::size_t> seen;
  for (const auto& ex : examples) {
    if (task == StageTask::kQuality) {
      seen.insert(ex.slice_labels.begin(), ex.slice_labels.end());
    } else {
      seen.insert(ex.patient_label);
    }
  }
  if (seen.size() < 2) {
    throw DegenerateDataError(
        stage_task_name(task) +
        " training data contains a single class; nothing to learn");
  }
}

double mean_loss(StageModel& model, const std::vector<Example>& examples,
                 double lambda) {
  if (examples.empty()) return 0.0;
  if (model.task() == StageTask::kQuality) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& ex : examples) {
      total += stage_bag_loss(model, ex.slices, ex.slice_labels, 0, 1.0, false) *
               static_cast<double>(ex.slices.size());
      count += ex.slices.size();
    }
    return total / static_cast<double>(count);
  }
  double total = 0.0;
  for (const auto& ex : examples) {
    total += stage_bag_loss(model, ex.slices, ex.slice_labels, ex.patient_label,
                            lambda, false);
  }
  return total / static_cast<double>(examples.size());
}

// Pooled embeddings live in the slice embedding space, so the trained slice
// classifier is a good starting point for the patient classifier.
void seed_patient_head(StageModel& model) {
  nn::Linear* head = model.patient_head();
  if (head == nullptr) return;
  const nn::Linear& slice = model.slice_head();
  if (head->weight().shape != slice.weight().shape) return;
  head->weight().value = slice.weight().value;
  head->bias().value = slice.bias().value;
}

TrainResult run_training(StageModel model, const Cohort& cohort,
                         const TrainConfig& config) {
  validate_train_config(config);
  const StageTask task = model.task();
  const auto train = build_examples(cohort.in_split(Split::kTrain), task);
  const auto val = build_examples(cohort.in_split(Split::kVal), task);
  if (train.empty()) {
    throw DegenerateDataError(stage_task_name(task) +
                              ": the train split has no usable bags");
  }
  require_two_classes(train, task);

  TrainResult result{std::move(model), {}};
  StageModel& m = result.model;
  m.set_decision_threshold(config.decision_threshold);
  std::vector<nn::Param*> trainable;
  for (nn::Param* p : m.params()) {
    const bool is_encoder = p->name.rfind("encoder.", 0) == 0;
    if (!(config.freeze_encoder && is_encoder)) trainable.push_back(p);
  }
  nn::AdamOptions adam_options;
  adam_options.weight_decay = config.weight_decay;
  nn::Adam adam(trainable, adam_options);
  std::vector<nn::Vec> best;
  double best_val = std::numeric_limits<double>::infinity();
  const double full_lambda =
      task == StageTask::kQuality ? 1.0 : config.slice_loss_weight;

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const bool warming = epoch <= config.warmup_epochs;
    const double lambda = warming ? 1.0 : full_lambda;
    if (epoch == config.warmup_epochs + 1 && config.warmup_epochs > 0 &&
        full_lambda < 1.0) {
      seed_patient_head(m);
    }
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double epoch_loss = 0.0;
    double epoch_weight = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      nn::zero_grads(m.params());
      // Quality batches average over slices, patient batches over bags.
      double batch_units = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        batch_units += task == StageTask::kQuality
                           ? static_cast<double>(train[order[b]].slices.size())
                           : 1.0;
      }
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const Example& ex = train[order[b]];
        const double units = task == StageTask::kQuality
                                 ? static_cast<double>(ex.slices.size())
                                 : 1.0;
        const double loss = stage_bag_loss(
            m, ex.slices, ex.slice_labels, ex.patient_label, lambda, true,
            units / batch_units, !config.freeze_encoder);
        batch_loss += loss * units;
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError(stage_task_name(task) + ": non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      try {
        adam.step(config.lr);
      } catch (const TrainingError& e) {
        throw TrainingError(stage_task_name(task) + ": epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + ": " + e.what());
      }
      epoch_loss += batch_loss;
      epoch_weight += batch_units;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / epoch_weight;
    stats.val_loss = mean_loss(m, val, full_lambda);
    result.history.push_back(stats);
    if (config.keep_best && !warming && !val.empty() && stats.val_loss < best_val) {
      best_val = stats.val_loss;
      best.clear();
      for (const nn::Param* p : m.params()) best.push_back(p->value);
    }
  }
  if (!best.empty()) {
    const auto params = m.params();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  }
  nn::zero_grads(m.params());
  return result;
}

}  // namespace

std::string stage_task_name(StageTask task) {
  switch (task) {
    case StageTask::kQuality: return "quality";
    case StageTask::kAbnormality: return "abnormal";
    case StageTask::kDisease: return "disease";
  }
  return "?";
}

StageTask parse_stage_task(const std::string& name) {
  if (name == "quality") return StageTask::kQuality;
  if (name == "abnormal" || name == "abnormality") return StageTask::kAbnormality;
  if (name == "disease") return StageTask::kDisease;
  throw SpecError("unknown stage '" + name + "'");
}

std::size_t stage_class_count(StageTask task) {
  return task == StageTask::kDisease ? kNumDiseaseClasses : 2;
}

std::string stage_file_stem(StageTask task) { return stage_task_name(task); }

void validate_train_config(const TrainConfig& config) {
  if (config.epochs < 1) throw SpecError("epochs must be >= 1");
  if (config.batch_size < 1) throw SpecError("batch_size must be >= 1");
  if (!(config.lr > 0.0) || !std::isfinite(config.lr)) {
    throw SpecError("lr must be positive");
  }
  if (!(config.slice_loss_weight >= 0.0 && config.slice_loss_weight <= 1.0)) {
    throw SpecError("slice_loss_weight (lambda) must lie in [0, 1]");
  }
  if (!(config.weight_decay >= 0.0) || !std::isfinite(config.weight_decay)) {
    throw SpecError("weight_decay must be >= 0");
  }
  if (!(config.decision_threshold > 0.0 && config.decision_threshold < 1.0)) {
    throw SpecError("decision_threshold must lie in (0, 1)");
  }
  if (config.warmup_epochs > config.epochs) {
    throw SpecError("warmup_epochs must not exceed epochs");
  }
}

StageModel::StageModel(StageTask task, std::size_t feature_dim,
                       const EncoderSpec& encoder,
                       const std::optional<AggregatorSpec>& aggregator,
                       std::uint64_t seed)
    : task_(task), seed_(seed), encoder_spec_(encoder) {
  if (feature_dim == 0 || encoder.embed_dim == 0) {
    throw SpecError("encoder dimensions must be positive");
  }
  nn::MlpSpec mlp;
  mlp.widths = encoder_widths(feature_dim, encoder);
  mlp.hidden = encoder.activation;
  mlp.output = encoder.output_activation.value_or(encoder.activation);
  mlp.seed = mix_seed(seed, 1);
  encoder_ = nn::Mlp(mlp, "encoder");

  const std::size_t k = stage_class_count(task);
  slice_head_ = nn::Linear("slice_head", encoder.embed_dim, k);
  Rng head_rng(mix_seed(seed, 2));
  slice_head_.init_glorot(head_rng);

  if (task == StageTask::kQuality) {
    if (aggregator) throw SpecError("the quality stage has no aggregator");
    return;
  }
  if (!aggregator) throw SpecError("patient stages need an aggregator");
  AggregatorSpec agg = *aggregator;
  agg.input_dim = encoder.embed_dim;
  agg.n_classes = k;
  agg.seed = mix_seed(seed, 3);
  aggregator_.emplace(agg, "aggregator");
  patient_head_.emplace("patient_head", aggregator_->output_dim(), k);
  Rng patient_rng(mix_seed(seed, 4));
  patient_head_->init_glorot(patient_rng);
}

void StageModel::set_decision_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw SpecError("decision_threshold must lie in (0, 1)");
  }
  decision_threshold_ = threshold;
}

std::vector<nn::Param*> StageModel::params() {
  std::vector<nn::Param*> out = encoder_.params();
  for (nn::Param* p : slice_head_.params()) out.push_back(p);
  if (aggregator_) {
    for (nn::Param* p : aggregator_->params()) out.push_back(p);
    for (nn::Param* p : patient_head_->params()) out.push_back(p);
  }
  return out;
}

std::vector<const nn::Param*> StageModel::params() const {
  auto mutable_params = const_cast<StageModel*>(this)->params();
  return {mutable_params.begin(), mutable_params.end()};
}

json StageModel::topology() const {
  json encoder = {
      {"widths", encoder_.spec().widths},
      {"activation", nn::activation_name(encoder_spec_.activation)},
      {"output_activation", nn::activation_name(encoder_.spec().output)},
  };
  return {
      {"version", kTopologyVersion},
      {"task", stage_task_name(task_)},
      {"feature_dim", feature_dim()},
      {"n_classes", n_classes()},
      {"seed", seed_},
      {"decision_threshold", decision_threshold_},
      {"encoder", std::move(encoder)},
      {"aggregator",
       aggregator_ ? aggregator_spec_to_json(aggregator_->spec()) : json(nullptr)},
  };
}

StageModel StageModel::from_topology(const json& topology) {
  try {
    if (topology.at("version").get<int>() != kTopologyVersion) {
      throw CheckpointError("unsupported topology version");
    }
    const StageTask task = parse_stage_task(topology.at("task").get<std::string>());
    const auto widths =
        topology.at("encoder").at("widths").get<std::vector<std::size_t>>();
    if (widths.size() < 2) throw CheckpointError("encoder needs >= 2 widths");
    EncoderSpec encoder;
    encoder.hidden.assign(widths.begin() + 1, widths.end() - 1);
    encoder.embed_dim = widths.back();
    encoder.activation = nn::parse_activation(
        topology.at("encoder").at("activation").get<std::string>());
    encoder.output_activation = nn::parse_activation(
        topology.at("encoder").at("output_activation").get<std::string>());
    std::optional<AggregatorSpec> agg;
    if (!topology.at("aggregator").is_null()) {
      agg = aggregator_spec_from_json(topology.at("aggregator"));
    }
    StageModel model(task, widths.front(), encoder, agg,
                     topology.at("seed").get<std::uint64_t>());
    if (model.n_classes() != topology.at("n_classes").get<std::size_t>()) {
      throw CheckpointError("class count does not match the stage task");
    }
    if (topology.contains("decision_threshold")) {
      const double t = topology.at("decision_threshold").get<double>();
      if (!(t > 0.0 && t < 1.0)) {
        throw CheckpointError("decision_threshold must lie in (0, 1)");
      }
      model.set_decision_threshold(t);
    }
    return model;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed stage topology: ") + e.what());
  } catch (const SpecError& e) {
    throw CheckpointError(std::string("invalid stage topology: ") + e.what());
  }
}

std::size_t slice_target(const VolumeBag& bag, std::size_t slice,
                         StageTask task) {
  switch (task) {
    case StageTask::kQuality:
      return bag.slice_quality[slice] == QualityLabel::kUngradable ? 1 : 0;
    case StageTask::kAbnormality:
      return bag.slice_abnormal[slice] ? 1 : 0;
    case StageTask::kDisease:
      return bag.slice_abnormal[slice]
                 ? static_cast<std::size_t>(index_of(bag.patient_disease))
                 : 0;
  }
  return 0;
}

std::size_t patient_target(const VolumeBag& bag, StageTask task) {
  switch (task) {
    case StageTask::kQuality: return 0;
    case StageTask::kAbnormality: return bag.is_abnormal() ? 1 : 0;
    case StageTask::kDisease:
      return static_cast<std::size_t>(index_of(bag.patient_disease));
  }
  return 0;
}

StagePrediction infer_stage(const StageModel& model,
                            std::span<const Vec> slices) {
  if (slices.empty()) throw ValidationError("cannot infer on an empty bag");
  StagePrediction out;
  std::vector<Vec> embeddings;
  embeddings.reserve(slices.size());
  for (const Vec& x : slices) {
    if (x.size() != model.feature_dim()) {
      throw CheckpointError("slice dimension " + std::to_string(x.size()) +
                            " does not match the " +
                            stage_task_name(model.task()) + " checkpoint (" +
                            std::to_string(model.feature_dim()) + ")");
    }
    embeddings.push_back(model.encoder().forward(x));
    out.slice_posteriors.push_back(
        nn::softmax(model.slice_head().forward(embeddings.back())));
  }
  if (const Aggregator* agg = model.aggregator()) {
    AggregationResult pooled = agg->pool(embeddings, out.slice_posteriors);
    out.patient_posterior = nn::softmax(model.patient_head()->forward(pooled.z));
    out.aggregation = std::move(pooled);
  }
  return out;
}

StagePrediction infer_stage(const StageModel& model,
                            std::span<const SliceFeature> slices) {
  std::vector<Vec> raw;
  raw.reserve(slices.size());
  for (const auto& s : slices) raw.push_back(s.values);
  return infer_stage(model, raw);
}

PosteriorEncoder posterior_encoder(const StageModel& disease) {
  if (disease.task() != StageTask::kDisease) {
    throw SpecError("posterior_encoder needs the disease stage");
  }
  const nn::MlpSpec& source = disease.encoder().spec();
  if (source.output != source.hidden) {
    throw SpecError("posterior_encoder needs a uniform encoder activation");
  }
  PosteriorEncoder out;
  out.spec.hidden.assign(source.widths.begin() + 1, source.widths.end());
  out.spec.embed_dim = disease.n_classes();
  out.spec.activation = source.hidden;
  out.spec.output_activation = nn::Activation::kSoftmax;
  nn::MlpSpec spec = source;
  spec.widths.push_back(disease.n_classes());
  spec.output = nn::Activation::kSoftmax;
  out.encoder = nn::Mlp(spec, "encoder");
  auto& layers = out.encoder.layers();
  const auto& trunk = disease.encoder().layers();
  for (std::size_t l = 0; l < trunk.size(); ++l) {
    layers[l].weight().value = trunk[l].weight().value;
    layers[l].bias().value = trunk[l].bias().value;
  }
  layers.back().weight().value = disease.slice_head().weight().value;
  layers.back().bias().value = disease.slice_head().bias().value;
  return out;
}

double stage_bag_loss(StageModel& model, std::span<const Vec> slices,
                      std::span<const std::size_t> slice_labels,
                      std::size_t patient_label, double slice_loss_weight,
                      bool with_grad, double grad_scale, bool encoder_grad) {
  const std::size_t n = slices.size();
  if (n == 0 || slice_labels.size() != n) {
    throw ValidationError("stage_bag_loss: slices and labels must be non-empty "
                          "and of equal length");
  }
  const bool patient = model.is_patient_stage();
  const double lambda = patient ? slice_loss_weight : 1.0;

  std::vector<nn::MlpTrace> traces(n);
  std::vector<Vec> embeddings(n);
  std::vector<Vec> posteriors(n);
  double slice_loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    embeddings[i] = model.encoder().forward(slices[i], &traces[i]);
    posteriors[i] = nn::softmax(model.slice_head().forward(embeddings[i]));
    slice_loss += nn::cross_entropy(posteriors[i], slice_labels[i]);
  }
  slice_loss /= static_cast<double>(n);

  double loss = lambda * slice_loss;
  PoolTrace pool_trace;
  AggregationResult pooled;
  Vec patient_probs;
  if (patient) {
    pooled = model.aggregator()->pool(embeddings, posteriors, &pool_trace);
    patient_probs = nn::softmax(model.patient_head()->forward(pooled.z));
    loss += (1.0 - lambda) * nn::cross_entropy(patient_probs, patient_label);
  }
  if (!with_grad) return loss;

  std::vector<Vec> d_embed(n, Vec(model.encoder().out_dim(), 0.0));
  if (patient) {
    Vec d_logits = nn::softmax_cross_entropy_grad(patient_probs, patient_label);
    for (double& g : d_logits) g *= grad_scale * (1.0 - lambda);
    Vec dz(pooled.z.size());
    model.patient_head()->backward(pooled.z, d_logits, dz);
    d_embed = model.aggregator()->backward(pool_trace, dz);
  }
  const double slice_scale = grad_scale * lambda / static_cast<double>(n);
  Vec de(model.encoder().out_dim());
  for (std::size_t i = 0; i < n; ++i) {
    Vec d_logits = nn::softmax_cross_entropy_grad(posteriors[i], slice_labels[i]);
    for (double& g : d_logits) g *= slice_scale;
    model.slice_head().backward(embeddings[i], d_logits, de);
    for (std::size_t j = 0; j < de.size(); ++j) d_embed[i][j] += de[j];
    if (encoder_grad) model.encoder().backward(traces[i], d_embed[i]);
  }
  return loss;
}

TrainResult train_quality(const Cohort& cohort, const EncoderSpec& encoder,
                          const TrainConfig& config) {
  StageModel model(StageTask::kQuality, cohort.feature_dim, encoder,
                   std::nullopt, config.seed);
  return run_training(std::move(model), cohort, config);
}

TrainResult train_patient_stage(const Cohort& cohort, StageTask task,
                                const EncoderSpec& encoder,
                                const AggregatorSpec& aggregator,
                                const TrainConfig& config,
                                const nn::Mlp* shared_encoder) {
  if (task == StageTask::kQuality) {
    throw SpecError("train_patient_stage does not train the quality stage");
  }
  StageModel model(task, cohort.feature_dim, encoder, aggregator, config.seed);
  if (shared_encoder != nullptr) {
    const nn::MlpSpec& a = shared_encoder->spec();
    const nn::MlpSpec& b = model.encoder().spec();
    if (a.widths != b.widths || a.hidden != b.hidden || a.output != b.output) {
      throw SpecError("shared encoder topology does not match");
    }
    auto& dst = model.encoder().layers();
    const auto& src = shared_encoder->layers();
    for (std::size_t l = 0; l < dst.size(); ++l) {
      dst[l].weight().value = src[l].weight().value;
      dst[l].bias().value = src[l].bias().value;
    }
  }
  return run_training(std::move(model), cohort, config);
}

std::string save_stage(const StageModel& model, const std::filesystem::path& dir) {
  const auto params = model.params();
  return save_checkpoint(CheckpointPaths::in(dir, stage_file_stem(model.task())),
                         model.topology(), params);
}

LoadedStage load_stage(const std::filesystem::path& dir, StageTask task) {
  const auto paths = CheckpointPaths::in(dir, stage_file_stem(task));
  LoadedStage loaded{StageModel::from_topology(read_topology(paths)), {}};
  if (loaded.model.task() != task) {
    throw CheckpointError(paths.topology.string() + " holds a " +
                          stage_task_name(loaded.model.task()) + " model");
  }
  auto params = loaded.model.params();
  loaded.checksum = load_checkpoint(paths, params).checksum;
  return loaded;
}

}  // namespace focuskit

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "focuskit/aggregate.hpp"
#include "focuskit/cohort.hpp"
#include "focuskit/nn.hpp"
#include "json.hpp"

namespace focuskit {

// quality:  slice-level Gradable(0) / Ungradable(1)
// abnormal: Normal(0) / Abnormal(1), slice and patient level
// disease:  the nine DiseaseLabel classes, slice and patient level
enum class StageTask { kQuality, kAbnormality, kDisease };

std::string stage_task_name(StageTask task);
StageTask parse_stage_task(const std::string& name);
std::size_t stage_class_count(StageTask task);
// Checkpoint stem: "quality", "abnormal", "disease".
std::string stage_file_stem(StageTask task);

struct EncoderSpec {
  std::vector<std::size_t> hidden = {64};
  std::size_t embed_dim = 32;
  nn::Activation activation = nn::Activation::kTanh;
  // Activation of the embedding layer; `activation` when unset.
  std::optional<nn::Activation> output_activation;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;  // in bags
  double lr = 3e-3;
  std::uint64_t seed = 0;
  // Weight of the slice-level loss; the patient loss gets 1 - lambda.
  double slice_loss_weight = 0.5;
  // Patient stages: epochs trained on the slice loss alone, after which the
  // patient head starts from a copy of the slice head.
  std::size_t warmup_epochs = 0;
  // Decoupled weight decay applied by Adam.
  double weight_decay = 0.0;
  // Return the weights of the epoch with the lowest validation loss.
  bool keep_best = true;
  // Stored with the model as its slice decision threshold: a slice is
  // assigned class 1 when its class-1 posterior reaches it (binary stages).
  double decision_threshold = 0.5;
  // Keep the encoder fixed (used when it is shared from another stage).
  bool freeze_encoder = false;
};

void validate_train_config(const TrainConfig& config);

// Encoder -> slice head (+ aggregator -> patient head for patient stages).
class StageModel {
 public:
  StageModel() = default;
  StageModel(StageTask task, std::size_t feature_dim, const EncoderSpec& encoder,
             const std::optional<AggregatorSpec>& aggregator, std::uint64_t seed);

  StageTask task() const { return task_; }
  std::size_t feature_dim() const { return encoder_.in_dim(); }
  std::size_t n_classes() const { return stage_class_count(task_); }
  bool is_patient_stage() const { return aggregator_.has_value(); }
  double decision_threshold() const { return decision_threshold_; }
  void set_decision_threshold(double threshold);

  const EncoderSpec& encoder_spec() const { return encoder_spec_; }
  nn::Mlp& encoder() { return encoder_; }
  const nn::Mlp& encoder() const { return encoder_; }
  nn::Linear& slice_head() { return slice_head_; }
  const nn::Linear& slice_head() const { return slice_head_; }
  Aggregator* aggregator() { return aggregator_ ? &*aggregator_ : nullptr; }
  const Aggregator* aggregator() const {
    return aggregator_ ? &*aggregator_ : nullptr;
  }
  nn::Linear* patient_head() { return patient_head_ ? &*patient_head_ : nullptr; }
  const nn::Linear* patient_head() const {
    return patient_head_ ? &*patient_head_ : nullptr;
  }

  std::vector<nn::Param*> params();
  std::vector<const nn::Param*> params() const;

  nlohmann::json topology() const;
  static StageModel from_topology(const nlohmann::json& topology);

 private:
  StageTask task_ = StageTask::kQuality;
  std::uint64_t seed_ = 0;
  double decision_threshold_ = 0.5;
  EncoderSpec encoder_spec_;
  nn::Mlp encoder_;
  nn::Linear slice_head_;
  std::optional<Aggregator> aggregator_;
  std::optional<nn::Linear> patient_head_;
};

struct StagePrediction {
  std::vector<nn::Vec> slice_posteriors;
  // Patient stages only.
  std::optional<nn::Vec> patient_posterior;
  std::optional<AggregationResult> aggregation;
};

StagePrediction infer_stage(const StageModel& model,
                            std::span<const nn::Vec> slices);
StagePrediction infer_stage(const StageModel& model,
                            std::span<const SliceFeature> slices);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  StageModel model;
  std::vector<EpochStats> history;
};

// Slice-level quality classifier over every slice of the train split.
TrainResult train_quality(const Cohort& cohort, const EncoderSpec& encoder,
                          const TrainConfig& config);

// Joint slice + patient training over the ground-truth gradable slices of
// each train-split bag. When `shared_encoder` is given its weights seed the
// new model's encoder.
TrainResult train_patient_stage(const Cohort& cohort, StageTask task,
                                const EncoderSpec& encoder,
                                const AggregatorSpec& aggregator,
                                const TrainConfig& config,
                                const nn::Mlp* shared_encoder = nullptr);

// The disease stage's encoder and slice head followed by a softmax, as one
// encoder mapping a slice to its disease posterior. A frozen copy is the
// shared encoder of the abnormality stage.
struct PosteriorEncoder {
  EncoderSpec spec;
  nn::Mlp encoder;
};
PosteriorEncoder posterior_encoder(const StageModel& disease);

// Loss of one bag: lambda * mean slice cross-entropy + (1 - lambda) * patient
// cross-entropy (slice term only for the quality stage). With `with_grad`,
// gradients scaled by `grad_scale` are accumulated into the model; the
// slice posteriors enter the aggregator as constants.
double stage_bag_loss(StageModel& model, std::span<const nn::Vec> slices,
                      std::span<const std::size_t> slice_labels,
                      std::size_t patient_label, double slice_loss_weight,
                      bool with_grad, double grad_scale = 1.0,
                      bool encoder_grad = true);

// Training-time label of one slice / one patient for a task.
std::size_t slice_target(const VolumeBag& bag, std::size_t slice, StageTask task);
std::size_t patient_target(const VolumeBag& bag, StageTask task);

// Writes <stem>.ckpt + <stem>.json under `dir`; returns the checksum.
std::string save_stage(const StageModel& model, const std::filesystem::path& dir);

struct LoadedStage {
  StageModel model;
  std::string checksum;
};
LoadedStage load_stage(const std::filesystem::path& dir, StageTask task);

}  // namespace focuskit

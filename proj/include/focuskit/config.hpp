#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "focuskit/aggregate.hpp"
#include "focuskit/evaluate.hpp"
#include "focuskit/pipeline.hpp"
#include "focuskit/stages.hpp"
#include "focuskit/synthgen.hpp"
#include "json.hpp"

namespace focuskit {

struct StageSettings {
  TrainConfig train;
  EncoderSpec encoder;
};

struct StageTrainSettings {
  StageSettings quality;
  StageSettings abnormal;
  StageSettings disease;
  // The disease stage is trained, then its patient side is refit on top of
  // its own frozen slice posteriors. The abnormality stage reuses that frozen
  // posterior encoder; its own encoder spec is then unused.
  bool shared_encoder = false;
};

struct EvalSettings {
  std::size_t bootstrap_resamples = 1000;
  GroupBy group_by = GroupBy::kAll;
};

// Effective configuration of a run. Per-module seeds are derived from `seed`
// by resolve_seeds(); they are not set in the file.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string output = "runs/default";
  CohortSpec synth;
  StageTrainSettings train;
  AggregatorSpec aggregator;
  PipelineConfig pipeline;
  EvalSettings eval;
};

RunConfig default_run_config();

// Missing keys keep their defaults. Unknown keys, wrong types and values that
// fail module validation throw SpecError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig read_run_config(const std::filesystem::path& path);

nlohmann::json run_config_to_json(const RunConfig& config);

// Derives synth, stage and aggregator seeds from config.seed.
void resolve_seeds(RunConfig& config);

// Applies FOCUSKIT_SEED if set (SpecError when not an unsigned integer), then
// resolve_seeds().
void apply_seed_override(RunConfig& config);

// FNV-1a of the canonical JSON of the effective config.
std::string config_hash(const RunConfig& config);

// {"tool", "version", "command", "seed", "config_hash", "config"}
nlohmann::json provenance_json(const RunConfig& config, const std::string& command);

}  // namespace focuskit

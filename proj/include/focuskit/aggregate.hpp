#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "focuskit/nn.hpp"
#include "json.hpp"

// Multiple-instance poolers that fuse per-slice embeddings h_1..h_n into one
// patient embedding z = sum_i w_i h_i (Max and ClassQuery excepted).
//
//   Attention       e_i = v . tanh(W h_i)                  w = softmax(e)
//   GatedAttention  e_i = v . (tanh(W h_i) * sigm(U h_i))  w = softmax(e)
//   UAAC            c_i = 1 - H(p_i) / ln K
//                   u_i = exp(e_i - max_j e_j) * (c_i + eps)
//                   w_i = u_i / sum_j u_j
//   ClassQuery      per class k: a_k = softmax_i(q_k . h_i),
//                   z = [sum_i a_ki h_i for k = 1..K]
//
// UAAC scores slices with the gated form by default (`gated_scoring`); the
// certainty c_i comes from the slice-level posterior p_i and is treated as a
// constant by backward().
namespace focuskit {

enum class PoolKind { kMean, kMax, kAttention, kGatedAttention, kClassQuery, kUAAC };

std::string pool_kind_name(PoolKind kind);
PoolKind parse_pool_kind(const std::string& name);

struct AggregatorSpec {
  PoolKind kind = PoolKind::kUAAC;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 64;
  double certainty_floor = 0.01;
  bool uncertainty_enabled = true;
  bool gated_scoring = true;
  std::size_t n_classes = 2;
  std::uint64_t seed = 0;
};

void validate_aggregator_spec(const AggregatorSpec& spec);
nlohmann::json aggregator_spec_to_json(const AggregatorSpec& spec);
AggregatorSpec aggregator_spec_from_json(const nlohmann::json& j);

struct AggregationResult {
  nn::Vec z;
  // Non-negative, sums to 1. Max reports 1/n; ClassQuery reports the mean of
  // its per-class weight vectors.
  nn::Vec weights;
  // In [0, 1]; 1 for every slice when no posteriors are supplied.
  nn::Vec certainties;
  nn::Vec attention_scores;
  // ClassQuery only: K rows of n weights.
  std::vector<nn::Vec> class_weights;
};

// 1 - H(p) / ln K. Requires K >= 2 and p of length K.
double certainty(std::span<const double> probs, std::size_t n_classes);

struct PoolTrace {
  const void* owner = nullptr;
  std::vector<nn::Vec> inputs;
  std::vector<nn::Vec> tanh_act;
  std::vector<nn::Vec> gate_act;
  std::vector<std::size_t> argmax;
  AggregationResult result;
};

class Aggregator {
 public:
  Aggregator() = default;
  explicit Aggregator(const AggregatorSpec& spec, const std::string& name = "agg");

  const AggregatorSpec& spec() const { return spec_; }
  std::size_t output_dim() const;

  // `posteriors` may be empty unless kind is UAAC with uncertainty enabled.
  AggregationResult pool(std::span<const nn::Vec> embeddings,
                         std::span<const nn::Vec> posteriors,
                         PoolTrace* trace = nullptr) const;

  // Accumulates parameter gradients and returns dL/dh_i for every slice.
  std::vector<nn::Vec> backward(const PoolTrace& trace,
                                std::span<const double> dz);

  std::vector<nn::Param*> params();

  nn::Param& tanh_proj() { return tanh_proj_; }
  nn::Param& gate_proj() { return gate_proj_; }
  nn::Param& score() { return score_; }
  nn::Param& queries() { return queries_; }

 private:
  bool uses_scores() const;
  bool uses_gate() const;
  double attention_score(std::span<const double> h, nn::Vec* tanh_out,
                         nn::Vec* gate_out) const;

  AggregatorSpec spec_;
  nn::Param tanh_proj_;  // W, [L, D]
  nn::Param gate_proj_;  // U, [L, D]
  nn::Param score_;      // v, [L]
  nn::Param queries_;    // q_k, [K, D]
};

}  // namespace focuskit

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "focuskit/rng.hpp"

// Minimal deterministic differentiable kernel: dense layers, pointwise
// nonlinearities, softmax / cross-entropy / entropy, hand-written reverse
// mode, Adam, and a central-difference gradient checker. Every layer keeps
// forward state in an explicit trace so a const model can serve many
// concurrent forward passes.
namespace focuskit::nn {

using Vec = std::vector<double>;

// Trainable tensor with its accumulated gradient.
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  Vec value;
  Vec grad;

  Param() = default;
  Param(std::string name, std::vector<std::size_t> shape);

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

enum class Activation { kNone, kReLU, kTanh, kSigmoid, kSoftmax };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

// In-place y = f(x).
void activate(Activation a, std::span<double> values);
// Maps dL/dy to dL/dx in place, given the activation output y.
void activation_backward(Activation a, std::span<const double> y,
                         std::span<double> grad);

double sigmoid(double x);

// Max-subtracted softmax; sums to 1 and is invariant to constant shifts.
Vec softmax(std::span<const double> logits);

inline constexpr double kProbabilityFloor = 1e-12;

// -log(max(p[label], 1e-12)). Throws std::out_of_range for a bad label.
double cross_entropy(std::span<const double> probs, std::size_t label);

// Gradient of cross_entropy(softmax(z), label) with respect to z: p - onehot.
Vec softmax_cross_entropy_grad(std::span<const double> probs, std::size_t label);

// Shannon entropy in nats, with probabilities floored at 1e-12 inside log.
double entropy(std::span<const double> probs);
// dH/dp_k = -(log p_k + 1), same floor.
Vec entropy_grad(std::span<const double> probs);

// y = W x + b with W stored row-major [out, in].
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in_dim, std::size_t out_dim);

  // Uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)); bias zero.
  void init_glorot(Rng& rng);
  void init_identity();

  Vec forward(std::span<const double> x) const;
  // Accumulates dW, db; writes dx when `dx` is non-empty.
  void backward(std::span<const double> x, std::span<const double> dy,
                std::span<double> dx);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }
  std::vector<Param*> params() { return {&weight_, &bias_}; }

 private:
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  Param weight_;
  Param bias_;
};

struct MlpSpec {
  // widths[0] is the input size; one Linear per consecutive pair.
  std::vector<std::size_t> widths;
  Activation hidden = Activation::kTanh;
  Activation output = Activation::kNone;
  std::uint64_t seed = 0;
};

void validate_mlp_spec(const MlpSpec& spec);

struct MlpTrace {
  // layer_io[0] is the input; layer_io[i + 1] is layer i's activated output.
  std::vector<Vec> layer_io;
  const void* owner = nullptr;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpSpec& spec, const std::string& name);

  std::size_t in_dim() const { return spec_.widths.front(); }
  std::size_t out_dim() const { return spec_.widths.back(); }
  const MlpSpec& spec() const { return spec_; }

  // Records the activations in `trace` when it is non-null.
  Vec forward(std::span<const double> x, MlpTrace* trace = nullptr) const;
  // Returns dL/dx. Throws StateError if `trace` did not come from forward()
  // on this model.
  Vec backward(const MlpTrace& trace, std::span<const double> dout);

  std::vector<Param*> params();
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  MlpSpec spec_;
  std::vector<Linear> layers_;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled (AdamW) decay: value -= lr * weight_decay * value.
  double weight_decay = 0.0;
};

// One bias-corrected Adam update of a single tensor with explicit moment
// state; `step` is 1-based. Throws TrainingError naming the parameter when
// its gradient is non-finite.
void adam_step(Param& param, Vec& first_moment, Vec& second_moment, double lr,
               std::int64_t step, const AdamOptions& options = {});

// Adam over a fixed, ordered parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Param*> params, AdamOptions options = {});

  void step(double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<Param*> params_;
  std::vector<Vec> m_;
  std::vector<Vec> v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

void zero_grads(std::span<Param* const> params);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Evaluates the objective; when `with_grad` is set it also accumulates
// analytic gradients into the parameters.
using Objective = std::function<double(bool with_grad)>;

// Central differences over every element of every parameter. Relative error
// is |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
GradCheckReport grad_check(std::span<Param* const> params,
                           const Objective& objective, double step = 1e-4);

}  // namespace focuskit::nn

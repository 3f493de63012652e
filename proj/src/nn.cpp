#include "focuskit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "focuskit/error.hpp"

namespace focuskit::nn {

Param::Param(std::string name, std::vector<std::size_t> shape)
    : name(std::move(name)), shape(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t d : this->shape) n *= d;
  value.assign(n, 0.0);
  grad.assign(n, 0.0);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kReLU: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "none";
}

Activation parse_activation(const std::string& name) {
  if (name == "none") return Activation::kNone;
  if (name == "relu") return Activation::kReLU;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softmax") return Activation::kSoftmax;
  throw SpecError("unknown activation '" + name + "'");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void activate(Activation a, std::span<double> values) {
  switch (a) {
    case Activation::kNone:
      return;
    case Activation::kReLU:
      for (double& v : values) v = v > 0.0 ? v : 0.0;
      return;
    case Activation::kTanh:
      for (double& v : values) v = std::tanh(v);
      return;
    case Activation::kSigmoid:
      for (double& v : values) v = sigmoid(v);
      return;
    case Activation::kSoftmax: {
      const Vec p = softmax(values);
      std::copy(p.begin(), p.end(), values.begin());
      return;
    }
  }
}

void activation_backward(Activation a, std::span<const double> y,
                         std::span<double> grad) {
  switch (a) {
    case Activation::kNone:
      return;
    case Activation::kReLU:
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] <= 0.0) grad[i] = 0.0;
      }
      return;
    case Activation::kTanh:
      for (std::size_t i = 0; i < y.size(); ++i) grad[i] *= 1.0 - y[i] * y[i];
      return;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < y.size(); ++i) grad[i] *= y[i] * (1.0 - y[i]);
      return;
    case Activation::kSoftmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * grad[i];
      for (std::size_t i = 0; i < y.size(); ++i) grad[i] = y[i] * (grad[i] - dot);
      return;
    }
  }
}

Vec softmax(std::span<const double> logits) {
  Vec out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double peak = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                            " out of range for " +
                            std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::clamp(probs[label], kProbabilityFloor, 1.0));
}

Vec softmax_cross_entropy_grad(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw std::out_of_range("softmax_cross_entropy_grad: label out of range");
  }
  Vec grad(probs.begin(), probs.end());
  grad[label] -= 1.0;
  return grad;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(std::max(p, kProbabilityFloor));
  }
  return h;
}

Vec entropy_grad(std::span<const double> probs) {
  Vec grad(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) {
    grad[k] = -(std::log(std::max(probs[k], kProbabilityFloor)) + 1.0);
  }
  return grad;
}

Linear::Linear(const std::string& name, std::size_t in_dim, std::size_t out_dim)
    : in_dim_(in_dim),
      out_dim_(out_dim),
      weight_(name + ".weight", {out_dim, in_dim}),
      bias_(name + ".bias", {out_dim}) {}

void Linear::init_glorot(Rng& rng) {
  const double a =
      std::sqrt(6.0 / static_cast<double>(in_dim_ + out_dim_));
  for (double& w : weight_.value) w = rng.uniform(-a, a);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

void Linear::init_identity() {
  std::fill(weight_.value.begin(), weight_.value.end(), 0.0);
  for (std::size_t i = 0; i < std::min(in_dim_, out_dim_); ++i) {
    weight_.value[i * in_dim_ + i] = 1.0;
  }
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

Vec Linear::forward(std::span<const double> x) const {
  if (x.size() != in_dim_) {
    throw ValidationError(weight_.name + ": input has dimension " +
                          std::to_string(x.size()) + ", expected " +
                          std::to_string(in_dim_));
  }
  Vec y(bias_.value);
  for (std::size_t o = 0; o < out_dim_; ++o) {
    const double* row = weight_.value.data() + o * in_dim_;
    double acc = 0.0;
    for (std::size_t i = 0; i < in_dim_; ++i) acc += row[i] * x[i];
    y[o] += acc;
  }
  return y;
}

void Linear::backward(std::span<const double> x, std::span<const double> dy,
                      std::span<double> dx) {
  for (std::size_t o = 0; o < out_dim_; ++o) {
    const double g = dy[o];
    bias_.grad[o] += g;
    if (g == 0.0) continue;
    double* grow = weight_.grad.data() + o * in_dim_;
    for (std::size_t i = 0; i < in_dim_; ++i) grow[i] += g * x[i];
  }
  if (dx.empty()) return;
  std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t o = 0; o < out_dim_; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    const double* row = weight_.value.data() + o * in_dim_;
    for (std::size_t i = 0; i < in_dim_; ++i) dx[i] += g * row[i];
  }
}

void validate_mlp_spec(const MlpSpec& spec) {
  if (spec.widths.size() < 2) {
    throw SpecError("an MLP needs at least one layer (two widths)");
  }
  for (std::size_t w : spec.widths) {
    if (w == 0) throw SpecError("MLP widths must be positive");
  }
  if (spec.hidden == Activation::kSoftmax) {
    throw SpecError("softmax is only supported as an output activation");
  }
}

Mlp::Mlp(const MlpSpec& spec, const std::string& name) : spec_(spec) {
  validate_mlp_spec(spec);
  Rng rng(spec.seed);
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    layers_.emplace_back(name + ".layer" + std::to_string(l), spec.widths[l],
                         spec.widths[l + 1]);
    layers_.back().init_glorot(rng);
  }
}

Vec Mlp::forward(std::span<const double> x, MlpTrace* trace) const {
  if (x.size() != in_dim()) {
    throw ValidationError("MLP input has dimension " + std::to_string(x.size()) +
                          ", expected " + std::to_string(in_dim()));
  }
  if (trace != nullptr) {
    trace->layer_io.clear();
    trace->layer_io.emplace_back(x.begin(), x.end());
    trace->owner = this;
  }
  Vec current(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    current = layers_[l].forward(current);
    activate(l + 1 == layers_.size() ? spec_.output : spec_.hidden, current);
    if (trace != nullptr) trace->layer_io.push_back(current);
  }
  return current;
}

Vec Mlp::backward(const MlpTrace& trace, std::span<const double> dout) {
  if (trace.owner != this || trace.layer_io.size() != layers_.size() + 1) {
    throw StateError("MLP backward called without a matching forward pass");
  }
  Vec grad(dout.begin(), dout.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    activation_backward(l + 1 == layers_.size() ? spec_.output : spec_.hidden,
                        trace.layer_io[l + 1], grad);
    Vec dx(layers_[l].in_dim());
    layers_[l].backward(trace.layer_io[l], grad, dx);
    grad = std::move(dx);
  }
  return grad;
}

std::vector<Param*> Mlp::params() {
  std::vector<Param*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.weight());
    out.push_back(&layer.bias());
  }
  return out;
}

void adam_step(Param& param, Vec& first_moment, Vec& second_moment, double lr,
               std::int64_t step, const AdamOptions& options) {
  if (step < 1) throw TrainingError("adam step index must be >= 1");
  for (double g : param.grad) {
    if (!std::isfinite(g)) {
      throw TrainingError("non-finite gradient in parameter " + param.name);
    }
  }
  first_moment.resize(param.size(), 0.0);
  second_moment.resize(param.size(), 0.0);
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = param.grad[i];
    first_moment[i] = options.beta1 * first_moment[i] + (1.0 - options.beta1) * g;
    second_moment[i] =
        options.beta2 * second_moment[i] + (1.0 - options.beta2) * g * g;
    const double m_hat = first_moment[i] / c1;
    const double v_hat = second_moment[i] / c2;
    param.value[i] -= lr * (m_hat / (std::sqrt(v_hat) + options.eps) +
                            options.weight_decay * param.value[i]);
  }
}

Adam::Adam(std::vector<Param*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Param* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step(double lr) {
  // Validate everything before mutating anything.
  for (const Param* p : params_) {
    for (double g : p->grad) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient in parameter " + p->name);
      }
    }
  }
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step(*params_[i], m_[i], v_[i], lr, t_, options_);
  }
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

GradCheckReport grad_check(std::span<Param* const> params,
                           const Objective& objective, double step) {
  zero_grads(params);
  objective(true);
  std::vector<Vec> analytic;
  for (const Param* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double up = objective(false);
      p.value[i] = saved - step;
      const double down = objective(false);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double ga = analytic[k][i];
      const double denom = std::max({std::abs(ga), std::abs(numeric), 1e-8});
      const double rel = std::abs(ga - numeric) / denom;
      ++report.checked;
      if (report.worst_param.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
  }
  zero_grads(params);
  return report;
}

}  // namespace focuskit::nn

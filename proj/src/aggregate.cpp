#include "focuskit/aggregate.hpp"

#include <algorithm>
#include <cmath>

#include "focuskit/error.hpp"
#include "focuskit/rng.hpp"

namespace focuskit {

using nn::Vec;

namespace {

constexpr double kStochasticTolerance = 1e-6;

void init_uniform(nn::Param& p, Rng& rng, std::size_t fan_in,
                  std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : p.value) v = rng.uniform(-a, a);
}

// y = M x for M stored row-major [rows, cols].
Vec matvec(const nn::Param& m, std::span<const double> x) {
  const std::size_t rows = m.shape[0];
  const std::size_t cols = m.shape[1];
  Vec y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m.value.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

// dM += g x^T; dx += M^T g.
void matvec_backward(nn::Param& m, std::span<const double> x,
                     std::span<const double> g, std::span<double> dx) {
  const std::size_t rows = m.shape[0];
  const std::size_t cols = m.shape[1];
  for (std::size_t r = 0; r < rows; ++r) {
    if (g[r] == 0.0) continue;
    double* grow = m.grad.data() + r * cols;
    const double* row = m.value.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      grow[c] += g[r] * x[c];
      dx[c] += g[r] * row[c];
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void check_posteriors(std::span<const Vec> posteriors, std::size_t n,
                      std::size_t n_classes) {
  if (posteriors.size() != n) {
    throw ValidationError("expected " + std::to_string(n) +
                          " slice posteriors, got " +
                          std::to_string(posteriors.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& p = posteriors[i];
    if (p.size() != n_classes) {
      throw ValidationError("slice posterior " + std::to_string(i) +
                            " has " + std::to_string(p.size()) +
                            " classes, expected " + std::to_string(n_classes));
    }
    double total = 0.0;
    for (double v : p) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ValidationError("slice posterior " + std::to_string(i) +
                              " is not a probability vector");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > kStochasticTolerance) {
      throw ValidationError("slice posterior " + std::to_string(i) +
                            " does not sum to 1");
    }
  }
}

}  // namespace

std::string pool_kind_name(PoolKind kind) {
  switch (kind) {
    case PoolKind::kMean: return "mean";
    case PoolKind::kMax: return "max";
    case PoolKind::kAttention: return "attention";
    case PoolKind::kGatedAttention: return "gated_attention";
    case PoolKind::kClassQuery: return "class_query";
    case PoolKind::kUAAC: return "uaac";
  }
  return "?";
}

PoolKind parse_pool_kind(const std::string& name) {
  for (PoolKind k : {PoolKind::kMean, PoolKind::kMax, PoolKind::kAttention,
                     PoolKind::kGatedAttention, PoolKind::kClassQuery,
                     PoolKind::kUAAC}) {
    if (pool_kind_name(k) == name) return k;
  }
  throw SpecError("unknown aggregator kind '" + name + "'");
}

void validate_aggregator_spec(const AggregatorSpec& spec) {
  if (spec.input_dim == 0) throw SpecError("aggregator input_dim must be >= 1");
  if (spec.hidden_dim == 0) throw SpecError("aggregator hidden_dim must be >= 1");
  if (!(spec.certainty_floor > 0.0) || !std::isfinite(spec.certainty_floor)) {
    throw SpecError("aggregator certainty_floor must be > 0");
  }
  if ((spec.kind == PoolKind::kUAAC || spec.kind == PoolKind::kClassQuery) &&
      spec.n_classes < 2) {
    throw SpecError("aggregator n_classes must be >= 2");
  }
}

nlohmann::json aggregator_spec_to_json(const AggregatorSpec& spec) {
  return {
      {"kind", pool_kind_name(spec.kind)},
      {"input_dim", spec.input_dim},
      {"hidden_dim", spec.hidden_dim},
      {"certainty_floor", spec.certainty_floor},
      {"uncertainty_enabled", spec.uncertainty_enabled},
      {"gated_scoring", spec.gated_scoring},
      {"n_classes", spec.n_classes},
      {"seed", spec.seed},
  };
}

AggregatorSpec aggregator_spec_from_json(const nlohmann::json& j) {
  AggregatorSpec spec;
  spec.kind = parse_pool_kind(j.at("kind").get<std::string>());
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  spec.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  spec.certainty_floor = j.at("certainty_floor").get<double>();
  spec.uncertainty_enabled = j.at("uncertainty_enabled").get<bool>();
  spec.gated_scoring = j.at("gated_scoring").get<bool>();
  spec.n_classes = j.at("n_classes").get<std::size_t>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  validate_aggregator_spec(spec);
  return spec;
}

double certainty(std::span<const double> probs, std::size_t n_classes) {
  if (n_classes < 2) {
    throw ValidationError("certainty requires at least 2 classes");
  }
  if (probs.size() != n_classes) {
    throw ValidationError("certainty: posterior length does not match K");
  }
  const double c =
      1.0 - nn::entropy(probs) / std::log(static_cast<double>(n_classes));
  return std::clamp(c, 0.0, 1.0);
}

Aggregator::Aggregator(const AggregatorSpec& spec, const std::string& name)
    : spec_(spec) {
  validate_aggregator_spec(spec);
  const std::size_t d = spec.input_dim;
  const std::size_t l = spec.hidden_dim;
  Rng rng(spec.seed);
  if (uses_scores()) {
    tanh_proj_ = nn::Param(name + ".tanh_proj", {l, d});
    init_uniform(tanh_proj_, rng, d, l);
    if (uses_gate()) {
      gate_proj_ = nn::Param(name + ".gate_proj", {l, d});
      init_uniform(gate_proj_, rng, d, l);
    }
    score_ = nn::Param(name + ".score", {l});
    init_uniform(score_, rng, l, 1);
  }
  if (spec.kind == PoolKind::kClassQuery) {
    queries_ = nn::Param(name + ".queries", {spec.n_classes, d});
    init_uniform(queries_, rng, d, spec.n_classes);
  }
}

bool Aggregator::uses_scores() const {
  return spec_.kind == PoolKind::kAttention ||
         spec_.kind == PoolKind::kGatedAttention ||
         spec_.kind == PoolKind::kUAAC;
}

bool Aggregator::uses_gate() const {
  return spec_.kind == PoolKind::kGatedAttention ||
         (spec_.kind == PoolKind::kUAAC && spec_.gated_scoring);
}

std::size_t Aggregator::output_dim() const {
  return spec_.kind == PoolKind::kClassQuery ? spec_.n_classes * spec_.input_dim
                                             : spec_.input_dim;
}

std::vector<nn::Param*> Aggregator::params() {
  std::vector<nn::Param*> out;
  if (uses_scores()) {
    out.push_back(&tanh_proj_);
    if (uses_gate()) out.push_back(&gate_proj_);
    out.push_back(&score_);
  }
  if (spec_.kind == PoolKind::kClassQuery) out.push_back(&queries_);
  return out;
}

double Aggregator::attention_score(std::span<const double> h, Vec* tanh_out,
                                   Vec* gate_out) const {
  Vec a = matvec(tanh_proj_, h);
  for (double& v : a) v = std::tanh(v);
  Vec mixed = a;
  if (uses_gate()) {
    Vec g = matvec(gate_proj_, h);
    for (double& v : g) v = nn::sigmoid(v);
    for (std::size_t j = 0; j < mixed.size(); ++j) mixed[j] *= g[j];
    if (gate_out != nullptr) *gate_out = std::move(g);
  }
  if (tanh_out != nullptr) *tanh_out = std::move(a);
  return dot(score_.value, mixed);
}

AggregationResult Aggregator::pool(std::span<const Vec> embeddings,
                                   std::span<const Vec> posteriors,
                                   PoolTrace* trace) const {
  const std::size_t n = embeddings.size();
  const std::size_t d = spec_.input_dim;
  if (n == 0) throw ValidationError("cannot pool an empty bag");
  for (const Vec& h : embeddings) {
    if (h.size() != d) {
      throw ValidationError("slice embedding has dimension " +
                            std::to_string(h.size()) + ", expected " +
                            std::to_string(d));
    }
  }
  const bool needs_posteriors =
      spec_.kind == PoolKind::kUAAC && spec_.uncertainty_enabled;
  if (needs_posteriors && posteriors.empty()) {
    throw ValidationError("UAAC with uncertainty enabled needs slice posteriors");
  }
  AggregationResult result;
  result.certainties.assign(n, 1.0);
  if (!posteriors.empty()) {
    check_posteriors(posteriors, n, posteriors.front().size());
    if (needs_posteriors && posteriors.front().size() != spec_.n_classes) {
      throw ValidationError("slice posteriors have " +
                            std::to_string(posteriors.front().size()) +
                            " classes, aggregator expects " +
                            std::to_string(spec_.n_classes));
    }
    const std::size_t k = posteriors.front().size();
    if (k >= 2) {
      for (std::size_t i = 0; i < n; ++i) {
        result.certainties[i] = certainty(posteriors[i], k);
      }
    }
  }
  result.attention_scores.assign(n, 0.0);
  result.weights.assign(n, 1.0 / static_cast<double>(n));
  result.z.assign(output_dim(), 0.0);
  if (trace != nullptr) {
    trace->owner = this;
    trace->inputs.assign(embeddings.begin(), embeddings.end());
    trace->tanh_act.clear();
    trace->gate_act.clear();
    trace->argmax.clear();
  }

  switch (spec_.kind) {
    case PoolKind::kMean:
      for (const Vec& h : embeddings) {
        for (std::size_t j = 0; j < d; ++j) result.z[j] += h[j];
      }
      for (double& v : result.z) v /= static_cast<double>(n);
      break;

    case PoolKind::kMax: {
      std::vector<std::size_t> argmax(d, 0);
      for (std::size_t j = 0; j < d; ++j) {
        double best = embeddings[0][j];
        for (std::size_t i = 1; i < n; ++i) {
          if (embeddings[i][j] > best) {
            best = embeddings[i][j];
            argmax[j] = i;
          }
        }
        result.z[j] = best;
      }
      if (trace != nullptr) trace->argmax = std::move(argmax);
      break;
    }

    case PoolKind::kAttention:
    case PoolKind::kGatedAttention:
    case PoolKind::kUAAC: {
      if (trace != nullptr) {
        trace->tanh_act.resize(n);
        if (uses_gate()) trace->gate_act.resize(n);
      }
      for (std::size_t i = 0; i < n; ++i) {
        result.attention_scores[i] = attention_score(
            embeddings[i], trace ? &trace->tanh_act[i] : nullptr,
            trace && uses_gate() ? &trace->gate_act[i] : nullptr);
      }
      const double peak = *std::max_element(result.attention_scores.begin(),
                                            result.attention_scores.end());
      const bool calibrate =
          spec_.kind == PoolKind::kUAAC && spec_.uncertainty_enabled;
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double u = std::exp(result.attention_scores[i] - peak);
        if (calibrate) u *= result.certainties[i] + spec_.certainty_floor;
        result.weights[i] = u;
        total += u;
      }
      for (double& w : result.weights) w /= total;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          result.z[j] += result.weights[i] * embeddings[i][j];
        }
      }
      break;
    }

    case PoolKind::kClassQuery: {
      const std::size_t k_classes = spec_.n_classes;
      result.class_weights.assign(k_classes, Vec(n, 0.0));
      std::fill(result.weights.begin(), result.weights.end(), 0.0);
      for (std::size_t k = 0; k < k_classes; ++k) {
        std::span<const double> q(queries_.value.data() + k * d, d);
        Vec scores(n);
        for (std::size_t i = 0; i < n; ++i) scores[i] = dot(q, embeddings[i]);
        for (std::size_t i = 0; i < n; ++i) {
          result.attention_scores[i] += scores[i] / static_cast<double>(k_classes);
        }
        Vec alpha = nn::softmax(scores);
        for (std::size_t i = 0; i < n; ++i) {
          result.weights[i] += alpha[i] / static_cast<double>(k_classes);
          for (std::size_t j = 0; j < d; ++j) {
            result.z[k * d + j] += alpha[i] * embeddings[i][j];
          }
        }
        result.class_weights[k] = std::move(alpha);
      }
      break;
    }
  }
  if (trace != nullptr) trace->result = result;
  return result;
}

std::vector<Vec> Aggregator::backward(const PoolTrace& trace,
                                      std::span<const double> dz) {
  if (trace.owner != this || trace.inputs.empty()) {
    throw StateError("aggregator backward called without a matching pool()");
  }
  if (dz.size() != output_dim()) {
    throw ValidationError("aggregator upstream gradient has wrong length");
  }
  const std::size_t n = trace.inputs.size();
  const std::size_t d = spec_.input_dim;
  const AggregationResult& r = trace.result;
  std::vector<Vec> dh(n, Vec(d, 0.0));

  switch (spec_.kind) {
    case PoolKind::kMean:
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          dh[i][j] = dz[j] / static_cast<double>(n);
        }
      }
      break;

    case PoolKind::kMax:
      for (std::size_t j = 0; j < d; ++j) dh[trace.argmax[j]][j] += dz[j];
      break;

    case PoolKind::kAttention:
    case PoolKind::kGatedAttention:
    case PoolKind::kUAAC: {
      // z = sum_i w_i h_i with w proportional to exp(e_i) * const_i, so
      // dL/de_i = w_i (g_i - sum_j w_j g_j), g_i = dz . h_i.
      Vec g(n);
      double mean_g = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = dot(dz, trace.inputs[i]);
        mean_g += r.weights[i] * g[i];
      }
      const std::size_t l = spec_.hidden_dim;
      for (std::size_t i = 0; i < n; ++i) {
        const Vec& h = trace.inputs[i];
        for (std::size_t j = 0; j < d; ++j) dh[i][j] = r.weights[i] * dz[j];
        const double de = r.weights[i] * (g[i] - mean_g);
        if (de == 0.0) continue;
        const Vec& a = trace.tanh_act[i];
        Vec d_tanh_pre(l);
        if (uses_gate()) {
          const Vec& gate = trace.gate_act[i];
          Vec d_gate_pre(l);
          for (std::size_t m = 0; m < l; ++m) {
            score_.grad[m] += de * a[m] * gate[m];
            const double da = de * score_.value[m] * gate[m];
            const double dg = de * score_.value[m] * a[m];
            d_tanh_pre[m] = da * (1.0 - a[m] * a[m]);
            d_gate_pre[m] = dg * gate[m] * (1.0 - gate[m]);
          }
          matvec_backward(gate_proj_, h, d_gate_pre, dh[i]);
        } else {
          for (std::size_t m = 0; m < l; ++m) {
            score_.grad[m] += de * a[m];
            d_tanh_pre[m] = de * score_.value[m] * (1.0 - a[m] * a[m]);
          }
        }
        matvec_backward(tanh_proj_, h, d_tanh_pre, dh[i]);
      }
      break;
    }

    case PoolKind::kClassQuery: {
      for (std::size_t k = 0; k < spec_.n_classes; ++k) {
        std::span<const double> dzk(dz.data() + k * d, d);
        std::span<const double> q(queries_.value.data() + k * d, d);
        const Vec& alpha = r.class_weights[k];
        Vec g(n);
        double mean_g = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          g[i] = dot(dzk, trace.inputs[i]);
          mean_g += alpha[i] * g[i];
        }
        double* dq = queries_.grad.data() + k * d;
        for (std::size_t i = 0; i < n; ++i) {
          const double ds = alpha[i] * (g[i] - mean_g);
          for (std::size_t j = 0; j < d; ++j) {
            dh[i][j] += alpha[i] * dzk[j] + ds * q[j];
            dq[j] += ds * trace.inputs[i][j];
          }
        }
      }
      break;
    }
  }
  return dh;
}

}  // namespace focuskit

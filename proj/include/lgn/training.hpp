#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgn/data.hpp"
#include "lgn/errors.hpp"
#include "lgn/metrics.hpp"
#include "lgn/network.hpp"
#include "lgn/selection.hpp"

namespace lgn {

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// -log softmax(y)_label and its gradient sigma - onehot(label).
[[nodiscard]] inline LossAndGrad cross_entropy_loss_and_grad(std::span<const double> y, std::size_t label) {
  if (label >= y.size()) throw std::invalid_argument("cross_entropy: label out of range");
  LossAndGrad out;
  out.grad.resize(y.size());
  const double ymax = *std::max_element(y.begin(), y.end());
  double sum = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    out.grad[c] = std::exp(y[c] - ymax);
    sum += out.grad[c];
  }
  for (auto& g : out.grad) g /= sum;
  out.loss = std::log(sum) - (y[label] - ymax);
  out.grad[label] -= 1.0;
  return out;
}

struct BatchLoss {
  double loss = 0.0;            // mean over the batch
  std::size_t correct = 0;
  std::vector<double> dlogits;  // d(mean loss)/dy, sample-major
};

[[nodiscard]] inline BatchLoss batch_cross_entropy(std::span<const double> logits, std::span<const std::int32_t> labels,
                                                   std::size_t classes) {
  const std::size_t batch = labels.size();
  BatchLoss out;
  out.dlogits.resize(batch * classes);
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    const auto y = logits.subspan(s * classes, classes);
    const auto lg = cross_entropy_loss_and_grad(y, static_cast<std::size_t>(labels[s]));
    out.loss += lg.loss * inv;
    for (std::size_t c = 0; c < classes; ++c) out.dlogits[s * classes + c] = lg.grad[c] * inv;
    out.correct += argmax_select(y) == static_cast<std::size_t>(labels[s]) ? 1 : 0;
  }
  return out;
}

/// d loss / d logits, laid out like Layer::logits.
using NetworkGradient = std::vector<std::vector<double>>;

/// Reverse pass through a traced forward. Every node applies the unified
/// surrogate rule dz_j = (delta/tau_b) w_j (g_j - hbar), and its input
/// gradients flow through the surrogate mixture sum_i w_i g_i.
///
/// Because every gate is bilinear, sum_s delta_s g_j(s) = c_j . M with the
/// moments M = sum_s delta_s (1, a_s, b_s, a_s b_s), so per-step selection
/// costs O(1) per sample and node.
[[nodiscard]] inline NetworkGradient backward_network(const Network& net, const ForwardTrace& trace,
                                                      std::span<const double> dlogits, double tau_b) {
  check_temperature(tau_b, "backward_network");
  if (tau_b != trace.options.temperature) {
    throw std::invalid_argument("backward_network: tau_b differs from the temperature the trace was recorded with");
  }
  if (trace.layers.size() != net.layers.size()) throw std::invalid_argument("backward_network: trace/network mismatch");
  const std::size_t batch = trace.batch;
  const auto& gs = net.groupsum;
  if (dlogits.size() != batch * gs.classes) throw std::invalid_argument("backward_network: gradient shape mismatch");
  const bool per_example = trace.layers.back().selection.empty();

  NetworkGradient grads(net.layers.size());
  // Upstream gradient of the current layer's outputs, node-major.
  std::vector<double> dh(net.output_width() * batch);
  for (std::size_t n = 0; n < net.output_width(); ++n) {
    const std::size_t c = net.class_of(n);
    for (std::size_t s = 0; s < batch; ++s) dh[n * batch + s] = dlogits[s * gs.classes + c] / gs.tau;
  }
  std::vector<double> dprev;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    const auto& prev = l == 0 ? trace.input : trace.layers[l - 1].output;
    const bool need_input_grad = l > 0;
    if (need_input_grad) dprev.assign(layer.input_width * batch, 0.0);
    auto& g = grads[l];
    g.assign(layer.logits.size(), 0.0);
    for (std::size_t n = 0; n < layer.width(); ++n) {
      const double* a = prev.data() + layer.src_a[n] * batch;
      const double* b = prev.data() + layer.src_b[n] * batch;
      const double* d = dh.data() + n * batch;
      double* da = need_input_grad ? dprev.data() + layer.src_a[n] * batch : nullptr;
      double* db = need_input_grad ? dprev.data() + layer.src_b[n] * batch : nullptr;
      double* dz = g.data() + n * kGateCount;
      if (!per_example) {
        const auto& sel = trace.layers[l].selection[n];
        std::array<double, 4> m{0, 0, 0, 0};
        for (std::size_t s = 0; s < batch; ++s) {
          m[0] += d[s];
          m[1] += d[s] * a[s];
          m[2] += d[s] * b[s];
          m[3] += d[s] * (a[s] * b[s]);
        }
        for (std::size_t j = 0; j < kGateCount; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < 4; ++c) dot += (kGates[j].coeffs[c] - sel.mix[c]) * m[c];
          dz[j] = sel.weights[j] * dot / tau_b;
        }
        if (need_input_grad) {
          for (std::size_t s = 0; s < batch; ++s) {
            da[s] += d[s] * (sel.mix[1] + sel.mix[3] * b[s]);
            db[s] += d[s] * (sel.mix[2] + sel.mix[3] * a[s]);
          }
        }
      } else {
        for (std::size_t s = 0; s < batch; ++s) {
          const auto sel = traced_selection(net, trace, l, n, s);
          const std::array<double, 4> phi{1.0, a[s], b[s], a[s] * b[s]};
          for (std::size_t j = 0; j < kGateCount; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < 4; ++c) dot += (kGates[j].coeffs[c] - sel.mix[c]) * phi[c];
            dz[j] += d[s] * sel.weights[j] * dot / tau_b;
          }
          if (need_input_grad) {
            da[s] += d[s] * (sel.mix[1] + sel.mix[3] * b[s]);
            db[s] += d[s] * (sel.mix[2] + sel.mix[3] * a[s]);
          }
        }
      }
    }
    if (need_input_grad) dh.swap(dprev);
  }
  return grads;
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of `params` in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
  if (st.m.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  if (st.m.size() != params.size()) throw std::invalid_argument("adam_step: state size mismatch");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
    params[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.eps);
  }
}

// ---------------------------------------------------------------------------
// CAGE

/// Mean over all selection nodes of max_i softmax(z_n)_i at temperature 1.
[[nodiscard]] inline double cage_confidence(const Network& net) { return commitment_by_layer(net).mean; }

struct CageConfig {
  double tau_min = 0.5;
  double tau_max = 3.0;
  double beta = 0.99;
};

struct CageState {
  CageConfig config;
  std::size_t k = kGateCount;
  double c_ema = 1.0 / static_cast<double>(kGateCount);
  double tau_b = 3.0;

  static CageState start(const CageConfig& cfg, std::size_t k = kGateCount) {
    if (!(cfg.tau_min > 0.0) || !(cfg.tau_min <= cfg.tau_max)) {
      throw std::invalid_argument("CAGE: need 0 < tau_min <= tau_max");
    }
    if (!(cfg.beta >= 0.0 && cfg.beta < 1.0)) throw std::invalid_argument("CAGE: beta must lie in [0,1)");
    if (k < 2) throw std::invalid_argument("CAGE: need K >= 2");
    CageState st;
    st.config = cfg;
    st.k = k;
    st.c_ema = 1.0 / static_cast<double>(k);
    st.tau_b = cfg.tau_max;
    return st;
  }
};

/// Linear map from [1/K, 1] onto [tau_max, tau_min], clamped.
[[nodiscard]] inline double cage_temperature(const CageConfig& cfg, std::size_t k, double c_ema) {
  const double floor = 1.0 / static_cast<double>(k);
  const double t = cfg.tau_max - (cfg.tau_max - cfg.tau_min) * (c_ema - floor) / (1.0 - floor);
  return std::clamp(t, cfg.tau_min, cfg.tau_max);
}

inline double cage_update(CageState& st, double c) {
  if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("cage_update: confidence outside [0,1]");
  st.c_ema = st.config.beta * st.c_ema + (1.0 - st.config.beta) * c;
  st.tau_b = cage_temperature(st.config, st.k, st.c_ema);
  return st.tau_b;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 512;
  std::size_t iterations = 10000;
  std::size_t eval_every = 500;
  MethodConfig method = MethodConfig::hard_st();
  double tau = 1.0;
  std::uint64_t seed = 0;
  bool cage_enabled = false;
  CageConfig cage;
  NoiseScope noise_scope = NoiseScope::PerStep;
  std::size_t eval_repeats = 1;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("lr: must be positive");
    if (batch_size == 0) throw ConfigError("batch: must be positive");
    if (eval_every == 0) throw ConfigError("eval-every: must be positive");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau: must be positive");
    if (eval_repeats == 0) throw ConfigError("eval-repeats: must be positive");
    if (cage_enabled) {
      if (!method.is_hard()) {
        throw ConfigError("cage: only defined for hard-forward methods (hard-st, gumbel-st), not " +
                          std::string(method.name()));
      }
      if (!(cage.tau_min > 0.0) || !(cage.tau_min <= cage.tau_max)) {
        throw ConfigError("cage-tau-min/cage-tau-max: need 0 < tau_min <= tau_max");
      }
      if (!(cage.beta >= 0.0 && cage.beta < 1.0)) throw ConfigError("cage-beta: must lie in [0,1)");
    }
  }
};

struct TrainResult {
  MetricsLog log;
  // tau_trace[0] is the backward temperature before training; entry t is the
  // one used at step t.
  std::vector<double> tau_trace;
};

using ProgressCallback = std::function<void(const MetricsRow&)>;

namespace detail {
inline std::string logit_diagnostic(const Network& net) {
  std::ostringstream os;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    double sq = 0.0;
    double mx = 0.0;
    bool finite = true;
    for (double z : net.layers[l].logits) {
      finite = finite && std::isfinite(z);
      sq += z * z;
      mx = std::max(mx, std::abs(z));
    }
    os << " layer" << l << "{norm=" << std::sqrt(sq) << ", max=" << mx << (finite ? "" : ", non-finite") << "}";
  }
  return os.str();
}
}  // namespace detail

/// Trains `net` in place. A checkpoint row is logged every `eval_every`
/// steps and after the final step.
inline TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set, Network& net,
                         const ProgressCallback& progress = {}) {
  cfg.validate();
  if (train_set.dims != net.input_width || test_set.dims != net.input_width) {
    throw ConfigError("dataset width " + std::to_string(train_set.dims) + " does not match network input width " +
                      std::to_string(net.input_width));
  }
  if (train_set.size() == 0) throw DataError("training set is empty");
  if (train_set.classes > net.groupsum.classes || test_set.classes > net.groupsum.classes) {
    throw ConfigError("classes: dataset has more classes than the network readout");
  }
  TrainResult result;
  std::vector<AdamState> adam(net.layers.size());
  auto cage = CageState::start(cfg.cage);
  result.tau_trace.push_back(cfg.cage_enabled ? cage.tau_b : cfg.tau);

  const std::size_t batch = cfg.batch_size;
  std::vector<double> input(net.input_width * batch);
  std::vector<std::int32_t> labels(batch);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t seen = 0;
  std::size_t steps_since = 0;

  for (std::size_t t = 1; t <= cfg.iterations; ++t) {
    auto rng = keyed_stream(cfg.seed, stream_tag::kBatch, t);
    for (std::size_t s = 0; s < batch; ++s) {
      const std::size_t idx = detail::uniform_index(rng, train_set.size());
      const auto row = train_set.row(idx);
      for (std::size_t d = 0; d < net.input_width; ++d) input[d * batch + s] = row[d];
      labels[s] = train_set.labels[idx];
    }
    const double tau_b = cfg.cage_enabled ? cage_update(cage, cage_confidence(net)) : cfg.tau;
    result.tau_trace.push_back(tau_b);

    ForwardOptions opt;
    opt.method = cfg.method;
    opt.temperature = tau_b;
    opt.noise_scope = cfg.noise_scope;
    opt.noise_seed = cfg.seed;
    opt.noise_tag = stream_tag::kTrainNoise;
    opt.step = t;
    const auto trace = forward_feature_major(net, input, batch, opt);
    const auto bl = batch_cross_entropy(trace.class_logits, labels, net.groupsum.classes);
    if (!std::isfinite(bl.loss)) {
      std::ostringstream os;
      os << "non-finite loss at step " << t << " (tau_b=" << tau_b << ");" << detail::logit_diagnostic(net);
      throw NumericError(os.str());
    }
    const auto grads = backward_network(net, trace, bl.dlogits, tau_b);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      adam_step(net.layers[l].logits, grads[l], adam[l], cfg.learning_rate);
    }
    loss_sum += bl.loss;
    correct += bl.correct;
    seen += batch;
    ++steps_since;

    if (t % cfg.eval_every == 0 || t == cfg.iterations) {
      EvalSettings es;
      es.method = cfg.method;
      es.temperature = tau_b;
      es.noise_scope = cfg.noise_scope;
      es.seed = cfg.seed;
      es.step = t;
      es.repeats = cfg.eval_repeats;
      const auto gap = evaluate_three_ways(net, test_set, es);
      MetricsRow row;
      row.iteration = t;
      row.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
      row.a_method = gap.a_method;
      row.a_soft = gap.a_soft;
      row.a_hard = gap.a_hard;
      row.selection_gap = gap.selection_gap;
      row.computation_gap = gap.computation_gap;
      row.total_gap = gap.total_gap;
      row.confidence = cage_confidence(net);
      row.tau_b = tau_b;
      row.loss = loss_sum / static_cast<double>(steps_since);
      result.log.push_back(row);
      if (progress) progress(row);
      loss_sum = 0.0;
      correct = 0;
      seen = 0;
      steps_since = 0;
    }
  }
  return result;
}

/// Iteration of the first checkpoint whose test accuracy (A_method) reaches
/// `target`.
[[nodiscard]] inline std::optional<std::size_t> convergence_iterations(const MetricsLog& log, double target) {
  for (const auto& row : log) {
    if (row.a_method >= target) return row.iteration;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Single-node convergence experiment

struct SingleNodeConfig {
  GateId target = gate::Xor;
  double learning_rate = 0.01;
  double confidence = 0.99;
  std::size_t max_steps = 1'000'000;
};

/// One Hard-ST node fed the four binary input pairs, read out as the two
/// class logits (h, 1 - h) under cross-entropy against the target gate's
/// truth table, trained with Adam from zero logits. Returns the first step
/// at which the surrogate softmax(z / tau_b) puts `confidence` mass on one
/// gate, or nothing if that never happens within max_steps.
[[nodiscard]] inline std::optional<std::size_t> single_node_steps_to_confidence(double tau_b,
                                                                                const SingleNodeConfig& cfg = {}) {
  check_temperature(tau_b, "single_node_steps_to_confidence");
  std::vector<double> z(kGateCount, 0.0);
  std::vector<double> grad(kGateCount);
  AdamState adam;
  std::vector<double> g(kGateCount);
  std::vector<double> dga(kGateCount);
  std::vector<double> dgb(kGateCount);
  const auto& target = gate_spec(cfg.target);
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < kGateCount; ++i) {
          g[i] = soft_gate_unchecked(kGates[i].coeffs, a, b);
          dga[i] = soft_gate_da(kGates[i].coeffs, b);
          dgb[i] = soft_gate_db(kGates[i].coeffs, a);
        }
        const auto rec = forward_node(z, MethodConfig::hard_st(), tau_b, std::nullopt, g);
        const std::array<double, 2> y{1.0 - rec.h, rec.h};
        const auto label = static_cast<std::size_t>(truth_table_bit(target.truth_table, a == 1, b == 1));
        const auto lg = cross_entropy_loss_and_grad(y, label);
        const double delta = (lg.grad[1] - lg.grad[0]) / 4.0;
        const auto ng = backward_node(rec, delta, tau_b, dga, dgb);
        for (std::size_t j = 0; j < kGateCount; ++j) grad[j] += ng.dz[j];
      }
    }
    adam_step(z, grad, adam, cfg.learning_rate);
    const auto w = softmax_temp(z, tau_b);
    if (*std::max_element(w.begin(), w.end()) >= cfg.confidence) return step;
  }
  return std::nullopt;
}

}  // namespace lgn

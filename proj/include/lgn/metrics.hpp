#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "lgn/data.hpp"
#include "lgn/network.hpp"
#include "lgn/selection.hpp"

namespace lgn {

/// Accuracies of the three evaluation pipelines for one checkpoint. Counts
/// are kept so the decomposition can be checked in integers.
struct GapReport {
  double a_method = 0.0;
  double a_soft = 0.0;
  double a_hard = 0.0;
  double selection_gap = 0.0;    // A_method - A_soft
  double computation_gap = 0.0;  // A_soft - A_hard
  double total_gap = 0.0;        // A_method - A_hard
  std::size_t samples = 0;
  std::size_t correct_method = 0;
  std::size_t correct_soft = 0;
  std::size_t correct_hard = 0;

  /// Builds the report from correct-prediction counts; method may be
  /// fractional when averaged over repeated noisy passes.
  static GapReport from_counts(double method, std::size_t soft, std::size_t hard, std::size_t n) {
    if (n == 0) throw std::invalid_argument("GapReport: no samples");
    GapReport r;
    const double nn = static_cast<double>(n);
    r.samples = n;
    r.correct_method = static_cast<std::size_t>(std::llround(method));
    r.correct_soft = soft;
    r.correct_hard = hard;
    r.a_method = method / nn;
    r.a_soft = static_cast<double>(soft) / nn;
    r.a_hard = static_cast<double>(hard) / nn;
    r.selection_gap = (method - static_cast<double>(soft)) / nn;
    r.computation_gap = (static_cast<double>(soft) - static_cast<double>(hard)) / nn;
    r.total_gap = (method - static_cast<double>(hard)) / nn;
    return r;
  }
};

[[nodiscard]] inline std::size_t count_correct(std::span<const double> logits, std::span<const std::int32_t> labels,
                                               std::size_t classes) {
  const auto pred = predict_classes<double>(logits, classes);
  std::size_t correct = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) correct += pred[s] == static_cast<std::size_t>(labels[s]) ? 1 : 0;
  return correct;
}

struct EvalSettings {
  MethodConfig method = MethodConfig::hard_st();
  double temperature = 1.0;
  NoiseScope noise_scope = NoiseScope::PerStep;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;      // keys the fresh evaluation noise
  std::size_t repeats = 1;     // noisy passes averaged into A_method
};

/// Runs the method's training forward, argmax selection with soft gates, and
/// the thresholded hard pipeline over `data`.
[[nodiscard]] inline GapReport evaluate_three_ways(const Network& net, const Dataset& data, const EvalSettings& es) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_three_ways: empty test set");
  if (es.repeats == 0) throw std::invalid_argument("evaluate_three_ways: repeats must be >= 1");
  const std::size_t classes = net.groupsum.classes;
  double method_correct = 0.0;
  const std::size_t passes = es.method.is_stochastic() ? es.repeats : 1;
  for (std::size_t r = 0; r < passes; ++r) {
    ForwardOptions opt;
    opt.method = es.method;
    opt.temperature = es.temperature;
    opt.noise_scope = es.noise_scope;
    opt.noise_seed = mix64(es.seed, r);
    opt.noise_tag = stream_tag::kEvalNoise;
    opt.step = es.step;
    method_correct +=
        static_cast<double>(count_correct(forward_eval_mode(net, data.view(), EvalMode::Method, opt), data.labels, classes));
  }
  method_correct /= static_cast<double>(passes);
  const auto soft = count_correct(forward_eval_mode(net, data.view(), EvalMode::SoftGateArgmax), data.labels, classes);
  const auto hard_scores = hard_class_scores(net, data.view());
  const auto hard_pred = predict_classes<std::int64_t>(hard_scores, classes);
  std::size_t hard = 0;
  for (std::size_t s = 0; s < hard_pred.size(); ++s) hard += hard_pred[s] == static_cast<std::size_t>(data.labels[s]) ? 1 : 0;
  return GapReport::from_counts(method_correct, soft, hard, data.size());
}

[[nodiscard]] inline double max_softmax(std::span<const double> z) {
  std::array<double, kGateCount> w{};
  softmax_into(z, 1.0, std::span<double>(w.data(), z.size()));
  return *std::max_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(z.size()));
}

struct CommitmentReport {
  std::vector<double> per_layer;
  double mean = 0.0;  // over all nodes
};

[[nodiscard]] inline CommitmentReport commitment_by_layer(const Network& net) {
  CommitmentReport r;
  double total = 0.0;
  std::size_t nodes = 0;
  for (const auto& layer : net.layers) {
    double sum = 0.0;
    for (std::size_t n = 0; n < layer.width(); ++n) sum += max_softmax(layer.node_logits(n));
    r.per_layer.push_back(layer.width() ? sum / static_cast<double>(layer.width()) : 0.0);
    total += sum;
    nodes += layer.width();
  }
  r.mean = nodes ? total / static_cast<double>(nodes) : 0.0;
  return r;
}

struct GateUsageHistogram {
  std::vector<std::array<std::size_t, kGateCount>> per_layer;
  std::array<std::size_t, kGateCount> total{};
};

[[nodiscard]] inline GateUsageHistogram gate_usage(const Network& net) {
  GateUsageHistogram h;
  for (const auto& layer : net.layers) {
    std::array<std::size_t, kGateCount> counts{};
    for (std::size_t n = 0; n < layer.width(); ++n) ++counts[static_cast<std::size_t>(layer.selected_gate(n).index())];
    for (std::size_t g = 0; g < kGateCount; ++g) h.total[g] += counts[g];
    h.per_layer.push_back(counts);
  }
  return h;
}

/// Probability the method's forward places on the argmax gate: 1 for
/// Hard-ST, softmax(z/tau) for the mixtures, softmax(z) for Gumbel-ST (the
/// chance the sampled gate is the argmax gate).
[[nodiscard]] inline double effective_winner_weight(std::span<const double> z, MethodConfig method, double temperature) {
  if (method == MethodConfig::hard_st()) return 1.0;
  const auto w = softmax_temp(z, method.is_hard() ? 1.0 : temperature);
  return w[argmax_select(z)];
}

/// 2 (1 - sigma_y) max_c sum_{n in G_c} (1 - w_{n,i*}) for each sample, given
/// the true-class probability under hard inference and the last-layer winner
/// weights.
[[nodiscard]] inline std::vector<double> loss_gap_bound(std::span<const double> sigma_y,
                                                        std::span<const double> winner_weights,
                                                        const GroupSumConfig& gs) {
  if (winner_weights.size() != gs.classes * gs.group_size) {
    throw std::invalid_argument("loss_gap_bound: weight count does not match the class groups");
  }
  double worst = 0.0;
  for (std::size_t c = 0; c < gs.classes; ++c) {
    double s = 0.0;
    for (std::size_t n = c * gs.group_size; n < (c + 1) * gs.group_size; ++n) s += 1.0 - winner_weights[n];
    worst = std::max(worst, s);
  }
  std::vector<double> out(sigma_y.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * (1.0 - sigma_y[i]) * worst;
  return out;
}

[[nodiscard]] inline std::vector<double> loss_gap_bound(const Network& net, const Dataset& batch, MethodConfig method,
                                                        double temperature) {
  const auto logits = forward_eval_mode(net, batch.view(), EvalMode::HardGateArgmax);
  const std::size_t classes = net.groupsum.classes;
  std::vector<double> sigma(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto p = softmax_temp(std::span<const double>(logits.data() + s * classes, classes), 1.0);
    sigma[s] = p[static_cast<std::size_t>(batch.labels[s])];
  }
  const auto& last = net.layers.back();
  std::vector<double> w(last.width());
  for (std::size_t n = 0; n < last.width(); ++n) w[n] = effective_winner_weight(last.node_logits(n), method, temperature);
  return loss_gap_bound(sigma, w, net.groupsum);
}

// ---------------------------------------------------------------------------
// Metrics log

struct MetricsRow {
  std::size_t iteration = 0;
  double train_accuracy = 0.0;
  double a_method = 0.0;
  double a_soft = 0.0;
  double a_hard = 0.0;
  double selection_gap = 0.0;
  double computation_gap = 0.0;
  double total_gap = 0.0;
  double confidence = 0.0;
  double tau_b = 0.0;
  double loss = 0.0;
};

using MetricsLog = std::vector<MetricsRow>;

/// Signed selection gap of largest magnitude, ignoring the first
/// `skip_fraction` of the checkpoints.
[[nodiscard]] inline double peak_gap(const MetricsLog& log, double skip_fraction = 0.0) {
  if (log.empty()) throw std::invalid_argument("peak_gap: empty log");
  const auto skip = static_cast<std::size_t>(std::floor(skip_fraction * static_cast<double>(log.size())));
  const std::size_t first = std::min(skip, log.size() - 1);
  double best = log[first].selection_gap;
  for (std::size_t i = first + 1; i < log.size(); ++i) {
    if (std::abs(log[i].selection_gap) > std::abs(best)) best = log[i].selection_gap;
  }
  return best;
}

/// Peak over the last 80% of checkpoints.
[[nodiscard]] inline double peak_gap_late(const MetricsLog& log) { return peak_gap(log, 0.2); }

}  // namespace lgn

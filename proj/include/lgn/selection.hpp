#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lgn/random.hpp"

namespace lgn {

enum class ForwardKind { Mixture, Hard };
enum class NoiseKind { None, Gumbel };

/// How a Gumbel draw is shared: one vector per node per step (a structural
/// sample used by the whole batch) or one per node per example.
enum class NoiseScope { PerStep, PerExample };

/// Which passes the configured temperature reaches.
enum class TemperatureRole {
  Shared,        // mixture methods: one tau for forward and backward
  BackwardOnly,  // hard methods: tau_b shapes only the surrogate gradient
};

/// One cell of the forward x noise factorial.
struct MethodConfig {
  ForwardKind forward = ForwardKind::Hard;
  NoiseKind noise = NoiseKind::None;

  static constexpr MethodConfig soft_mix() { return {ForwardKind::Mixture, NoiseKind::None}; }
  static constexpr MethodConfig soft_gumbel() { return {ForwardKind::Mixture, NoiseKind::Gumbel}; }
  static constexpr MethodConfig hard_st() { return {ForwardKind::Hard, NoiseKind::None}; }
  static constexpr MethodConfig gumbel_st() { return {ForwardKind::Hard, NoiseKind::Gumbel}; }

  [[nodiscard]] constexpr bool is_hard() const { return forward == ForwardKind::Hard; }
  [[nodiscard]] constexpr bool is_stochastic() const { return noise == NoiseKind::Gumbel; }
  [[nodiscard]] constexpr TemperatureRole temperature_role() const {
    return is_hard() ? TemperatureRole::BackwardOnly : TemperatureRole::Shared;
  }

  [[nodiscard]] constexpr std::string_view name() const {
    if (forward == ForwardKind::Mixture) return noise == NoiseKind::None ? "soft-mix" : "soft-gumbel";
    return noise == NoiseKind::None ? "hard-st" : "gumbel-st";
  }

  friend constexpr bool operator==(MethodConfig, MethodConfig) = default;
};

[[nodiscard]] inline MethodConfig parse_method(std::string_view name) {
  for (const auto m : {MethodConfig::soft_mix(), MethodConfig::soft_gumbel(), MethodConfig::hard_st(),
                       MethodConfig::gumbel_st()}) {
    if (m.name() == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected soft-mix, soft-gumbel, hard-st or gumbel-st)");
}

inline void check_temperature(double tau, const char* where) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument(std::string(where) + ": temperature must be positive and finite, got " +
                                std::to_string(tau));
  }
}

/// Writes softmax(z / tau) into `out` using max subtraction; the result is
/// renormalised so that it sums to one.
inline void softmax_into(std::span<const double> z, double tau, std::span<double> out) {
  check_temperature(tau, "softmax_temp");
  if (z.size() != out.size() || z.empty()) throw std::invalid_argument("softmax_temp: size mismatch");
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp((z[i] - zmax) / tau);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
}

[[nodiscard]] inline std::vector<double> softmax_temp(std::span<const double> z, double tau) {
  std::vector<double> out(z.size());
  softmax_into(z, tau, out);
  return out;
}

/// Smallest index attaining the maximum.
[[nodiscard]] inline std::size_t argmax_select(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("argmax_select: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] > z[best]) best = i;
  }
  return best;
}

inline constexpr double kGumbelUniformClamp = 1e-12;

[[nodiscard]] inline double gumbel_from_uniform(double u) {
  u = std::clamp(u, kGumbelUniformClamp, 1.0 - kGumbelUniformClamp);
  return -std::log(-std::log(u));
}

inline void sample_gumbel_into(SplitMix64& rng, std::span<double> out) {
  for (auto& g : out) g = gumbel_from_uniform(rng.open_unit());
}

/// K i.i.d. standard Gumbel draws.
[[nodiscard]] inline std::vector<double> sample_gumbel(std::size_t k, SplitMix64& rng) {
  if (k == 0) throw std::invalid_argument("sample_gumbel: K must be >= 1");
  std::vector<double> g(k);
  sample_gumbel_into(rng, g);
  return g;
}

struct NodeForwardRecord {
  double h = 0.0;
  std::vector<double> weights;       // mixture weights or ST surrogate softmax
  std::optional<std::size_t> winner;  // set for hard methods
  std::vector<double> gate_outputs;
  MethodConfig method;
  double temperature = 1.0;
};

namespace detail {
inline std::vector<double> perturbed(std::span<const double> z, MethodConfig method,
                                     std::optional<std::span<const double>> noise) {
  const bool wants_noise = method.is_stochastic();
  if (wants_noise != noise.has_value()) {
    throw std::invalid_argument(std::string("forward_node: method ") + std::string(method.name()) +
                                (wants_noise ? " requires" : " must not receive") + " a Gumbel vector");
  }
  std::vector<double> v(z.begin(), z.end());
  if (noise) {
    if (noise->size() != z.size()) throw std::invalid_argument("forward_node: noise length mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += (*noise)[i];
  }
  return v;
}
}  // namespace detail

/// Forward pass of one selection node. `temperature` is tau for mixture
/// methods and tau_b for hard methods, where it only shapes `weights`.
[[nodiscard]] inline NodeForwardRecord forward_node(std::span<const double> z, MethodConfig method,
                                                    double temperature,
                                                    std::optional<std::span<const double>> noise,
                                                    std::span<const double> gate_outputs) {
  if (gate_outputs.size() != z.size()) throw std::invalid_argument("forward_node: gate output length mismatch");
  if (z.size() < 2) throw std::invalid_argument("forward_node: need at least two candidates");
  const auto scores = detail::perturbed(z, method, noise);
  NodeForwardRecord rec;
  rec.method = method;
  rec.temperature = temperature;
  rec.gate_outputs.assign(gate_outputs.begin(), gate_outputs.end());
  rec.weights = softmax_temp(scores, temperature);
  if (method.is_hard()) {
    const auto k = argmax_select(scores);
    rec.winner = k;
    rec.h = gate_outputs[k];
  } else {
    rec.h = std::inner_product(rec.weights.begin(), rec.weights.end(), gate_outputs.begin(), 0.0);
  }
  return rec;
}

struct NodeGradient {
  std::vector<double> dz;
  double da = 0.0;
  double db = 0.0;
};

/// Surrogate-mixture backward: dz_j = (delta / tau_b) w_j (g_j - hbar), and the
/// input gradients flow through sum_i w_i dg_i.
[[nodiscard]] inline NodeGradient backward_node(const NodeForwardRecord& rec, double delta, double tau_b,
                                                std::span<const double> dgate_da,
                                                std::span<const double> dgate_db) {
  check_temperature(tau_b, "backward_node");
  const auto k = rec.weights.size();
  if (dgate_da.size() != k || dgate_db.size() != k || rec.gate_outputs.size() != k) {
    throw std::invalid_argument("backward_node: length mismatch");
  }
  const double hbar = std::inner_product(rec.weights.begin(), rec.weights.end(), rec.gate_outputs.begin(), 0.0);
  NodeGradient out;
  out.dz.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    out.dz[j] = (delta / tau_b) * rec.weights[j] * (rec.gate_outputs[j] - hbar);
    out.da += rec.weights[j] * dgate_da[j];
    out.db += rec.weights[j] * dgate_db[j];
  }
  out.da *= delta;
  out.db *= delta;
  return out;
}

/// h_method - g[argmax z] for one forward realisation.
[[nodiscard]] inline double node_selection_gap(std::span<const double> z, MethodConfig method, double temperature,
                                               std::span<const double> gate_outputs,
                                               std::optional<std::span<const double>> noise = std::nullopt) {
  const auto rec = forward_node(z, method, temperature, noise, gate_outputs);
  return rec.h - gate_outputs[argmax_select(z)];
}

/// Expected Gumbel-ST gap: sum_{i != i*} p_i (g_i - g_{i*}) with p = softmax(z).
[[nodiscard]] inline double gumbel_expected_selection_gap(std::span<const double> z,
                                                          std::span<const double> gate_outputs) {
  if (gate_outputs.size() != z.size()) throw std::invalid_argument("gumbel_expected_selection_gap: length mismatch");
  const auto p = softmax_temp(z, 1.0);
  const auto best = argmax_select(z);
  double gap = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (i != best) gap += p[i] * (gate_outputs[i] - gate_outputs[best]);
  }
  return gap;
}

/// (1 - w_{i*}) * max_i |g_i - g_{i*}|, with i* the argmax of the raw logits.
[[nodiscard]] inline double selection_gap_bound(std::span<const double> z, std::span<const double> weights,
                                                std::span<const double> gate_outputs) {
  const auto best = argmax_select(z);
  double dmax = 0.0;
  for (double g : gate_outputs) dmax = std::max(dmax, std::abs(g - gate_outputs[best]));
  return (1.0 - weights[best]) * dmax;
}

}  // namespace lgn

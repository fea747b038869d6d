#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgn/errors.hpp"
#include "lgn/gates.hpp"
#include "lgn/random.hpp"
#include "lgn/selection.hpp"

namespace lgn {

inline constexpr std::size_t kGateCount = kNumGates;

struct Architecture {
  std::size_t input_width = 0;
  std::size_t layers = 1;
  std::size_t width = 0;
  std::size_t classes = 2;
};

/// Class readout: class c sums nodes [c*group_size, (c+1)*group_size) of the
/// last layer and divides by tau.
struct GroupSumConfig {
  std::size_t classes = 0;
  std::size_t group_size = 0;
  double tau = 1.0;
};

/// alpha(C) = 1.42 / (ln(C-1) + 0.7): two standard deviations of a class-sum
/// difference at init mapped onto a top-class probability of about 0.66.
[[nodiscard]] inline double groupsum_alpha(std::size_t classes) {
  if (classes < 2) throw std::invalid_argument("groupsum_alpha: need at least two classes");
  return 1.42 / (std::log(static_cast<double>(classes - 1)) + 0.7);
}

[[nodiscard]] inline double groupsum_tau(std::size_t classes, std::size_t group_size) {
  if (group_size < 1) throw std::invalid_argument("groupsum_tau: group size must be >= 1");
  return groupsum_alpha(classes) * std::sqrt(static_cast<double>(group_size));
}

struct Layer {
  std::size_t input_width = 0;
  std::vector<std::uint32_t> src_a;
  std::vector<std::uint32_t> src_b;
  std::vector<double> logits;  // width x 16, one row per node

  [[nodiscard]] std::size_t width() const { return src_a.size(); }
  [[nodiscard]] std::span<double> node_logits(std::size_t n) { return {logits.data() + n * kGateCount, kGateCount}; }
  [[nodiscard]] std::span<const double> node_logits(std::size_t n) const {
    return {logits.data() + n * kGateCount, kGateCount};
  }
  [[nodiscard]] GateId selected_gate(std::size_t n) const {
    return GateId(static_cast<int>(argmax_select(node_logits(n))));
  }
};

struct Network {
  std::size_t input_width = 0;
  std::vector<Layer> layers;
  GroupSumConfig groupsum;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t output_width() const { return layers.empty() ? 0 : layers.back().width(); }
  [[nodiscard]] std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.width();
    return n;
  }
  [[nodiscard]] std::size_t class_of(std::size_t last_layer_node) const {
    return last_layer_node / groupsum.group_size;
  }

  /// Throws std::invalid_argument describing the first broken invariant.
  void validate() const {
    if (layers.empty()) throw std::invalid_argument("network: no layers");
    std::size_t in = input_width;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      const auto where = "network layer " + std::to_string(l);
      if (layer.input_width != in) throw std::invalid_argument(where + ": input width mismatch");
      if (layer.src_b.size() != layer.width() || layer.logits.size() != layer.width() * kGateCount) {
        throw std::invalid_argument(where + ": inconsistent array sizes");
      }
      for (std::size_t n = 0; n < layer.width(); ++n) {
        if (layer.src_a[n] >= in || layer.src_b[n] >= in) throw std::invalid_argument(where + ": source out of range");
        if (layer.src_a[n] == layer.src_b[n]) throw std::invalid_argument(where + ": node wired to one source twice");
      }
      for (double z : layer.logits) {
        if (!std::isfinite(z)) throw std::invalid_argument(where + ": non-finite logit");
      }
      in = layer.width();
    }
    if (groupsum.classes < 1 || groupsum.group_size < 1 || groupsum.classes * groupsum.group_size != in) {
      throw std::invalid_argument("network: class groups must partition the last layer exactly");
    }
    if (!(groupsum.tau > 0.0)) throw std::invalid_argument("network: GroupSum tau must be positive");
  }
};

namespace detail {
[[nodiscard]] inline std::size_t uniform_index(SplitMix64& rng, std::size_t n) {
  // Modulo bias is below n / 2^64.
  return static_cast<std::size_t>(rng() % n);
}
}  // namespace detail

/// Random distinct-pair wiring from the previous layer, N(0,1) logits.
[[nodiscard]] inline Network build_network(const Architecture& arch, std::uint64_t seed) {
  if (arch.layers < 1) throw std::invalid_argument("build_network: need at least one layer");
  if (arch.classes < 2) throw std::invalid_argument("build_network: need at least two classes");
  if (arch.input_width < 2) throw std::invalid_argument("build_network: need at least two input features");
  if (arch.width < arch.classes) throw std::invalid_argument("build_network: width smaller than class count");
  if (arch.width % arch.classes != 0) {
    throw std::invalid_argument("build_network: width " + std::to_string(arch.width) +
                                " is not divisible by class count " + std::to_string(arch.classes));
  }
  Network net;
  net.input_width = arch.input_width;
  net.seed = seed;
  auto rng = keyed_stream(seed, stream_tag::kInit);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t in = arch.input_width;
  for (std::size_t l = 0; l < arch.layers; ++l) {
    Layer layer;
    layer.input_width = in;
    layer.src_a.resize(arch.width);
    layer.src_b.resize(arch.width);
    for (std::size_t n = 0; n < arch.width; ++n) {
      const auto a = detail::uniform_index(rng, in);
      auto b = detail::uniform_index(rng, in - 1);
      if (b >= a) ++b;
      layer.src_a[n] = static_cast<std::uint32_t>(a);
      layer.src_b[n] = static_cast<std::uint32_t>(b);
    }
    layer.logits.resize(arch.width * kGateCount);
    for (auto& z : layer.logits) z = normal(rng);
    net.layers.push_back(std::move(layer));
    in = arch.width;
  }
  const std::size_t k = arch.width / arch.classes;
  net.groupsum = {arch.classes, k, groupsum_tau(arch.classes, k)};
  return net;
}

/// Row-major view of a sample matrix.
struct RowMatrix {
  std::span<const double> values;
  std::size_t cols = 0;

  [[nodiscard]] std::size_t rows() const { return cols == 0 ? 0 : values.size() / cols; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return values.subspan(i * cols, cols); }
};

struct ForwardOptions {
  MethodConfig method = MethodConfig::hard_st();
  double temperature = 1.0;  // tau (mixture) or tau_b (hard)
  NoiseScope noise_scope = NoiseScope::PerStep;
  std::uint64_t noise_seed = 0;
  std::uint64_t noise_tag = stream_tag::kTrainNoise;
  std::uint64_t step = 0;
};

/// Gumbel stream for one node: slot 0 is the per-step draw, slot s+1 the draw
/// for batch position s.
[[nodiscard]] inline SplitMix64 node_noise_stream(const ForwardOptions& opt, std::uint64_t node_id,
                                                  std::uint64_t slot) {
  return keyed_stream(mix64(opt.noise_seed, opt.noise_tag), opt.step, node_id, slot);
}

/// Selection scores z (+ G) of one node.
inline void node_scores(std::span<const double> z, const ForwardOptions& opt, std::uint64_t node_id,
                        std::uint64_t slot, std::span<double> out) {
  std::copy(z.begin(), z.end(), out.begin());
  if (opt.method.is_stochastic()) {
    auto rng = node_noise_stream(opt, node_id, slot);
    for (auto& v : out) v += gumbel_from_uniform(rng.open_unit());
  }
}

using Coeffs = std::array<double, 4>;

/// Resolved selection of one node for one noise realisation.
struct NodeSelection {
  Coeffs forward;  // coefficients of the forward output
  Coeffs mix;      // sum_i w_i c_i of the surrogate (or forward mixture)
  std::uint8_t winner = 0;
  std::array<double, kGateCount> weights{};
};

[[nodiscard]] inline NodeSelection resolve_selection(std::span<const double> scores, MethodConfig method,
                                                     double temperature) {
  NodeSelection sel;
  softmax_into(scores, temperature, sel.weights);
  sel.mix = {0, 0, 0, 0};
  for (std::size_t i = 0; i < kGateCount; ++i) {
    for (std::size_t c = 0; c < 4; ++c) sel.mix[c] += sel.weights[i] * kGates[i].coeffs[c];
  }
  if (method.is_hard()) {
    sel.winner = static_cast<std::uint8_t>(argmax_select(scores));
    sel.forward = kGates[sel.winner].coeffs;
  } else {
    sel.winner = static_cast<std::uint8_t>(argmax_select(scores));
    sel.forward = sel.mix;
  }
  return sel;
}

struct LayerTrace {
  std::vector<double> output;  // node-major: output[n * batch + s]
  // One entry per node under per-step noise. Empty under per-example noise,
  // where selections are recomputed from the keyed streams when needed.
  std::vector<NodeSelection> selection;
};

struct ForwardTrace {
  ForwardOptions options;
  std::size_t batch = 0;
  std::vector<double> input;  // feature-major: input[d * batch + s]
  std::vector<LayerTrace> layers;
  std::vector<double> class_logits;  // sample-major: [s * C + c]
};

[[nodiscard]] inline std::vector<double> to_feature_major(RowMatrix rows) {
  const std::size_t b = rows.rows();
  std::vector<double> out(rows.cols * b);
  for (std::size_t s = 0; s < b; ++s) {
    const auto r = rows.row(s);
    for (std::size_t d = 0; d < rows.cols; ++d) out[d * b + s] = r[d];
  }
  return out;
}

namespace detail {

inline void check_unit_interval(std::span<const double> v) {
  for (double x : v) {
    if (!(x >= 0.0 && x <= 1.0)) {
      throw std::domain_error("network input outside [0,1]: " + std::to_string(x));
    }
  }
}

inline void groupsum_readout(const Network& net, std::span<const double> last, std::size_t batch,
                             std::vector<double>& logits) {
  const auto& gs = net.groupsum;
  logits.assign(batch * gs.classes, 0.0);
  for (std::size_t c = 0; c < gs.classes; ++c) {
    for (std::size_t n = c * gs.group_size; n < (c + 1) * gs.group_size; ++n) {
      const double* h = last.data() + n * batch;
      for (std::size_t s = 0; s < batch; ++s) logits[s * gs.classes + c] += h[s];
    }
  }
  for (auto& y : logits) y /= gs.tau;
}

// h[s] = c . (1, a, b, ab) for every sample.
inline void apply_coeffs(const Coeffs& c, const double* a, const double* b, double* h, std::size_t batch) {
  for (std::size_t s = 0; s < batch; ++s) h[s] = soft_gate_unchecked(c, a[s], b[s]);
}

}  // namespace detail

/// Training-mode forward over a feature-major batch. The trace keeps what the
/// backward pass needs.
[[nodiscard]] inline ForwardTrace forward_feature_major(const Network& net, std::vector<double> input,
                                                        std::size_t batch, const ForwardOptions& opt) {
  check_temperature(opt.temperature, "forward");
  if (input.size() != net.input_width * batch) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch ? input.size() / batch : 0) +
                                " features, network expects " + std::to_string(net.input_width));
  }
  detail::check_unit_interval(input);
  ForwardTrace trace;
  trace.options = opt;
  trace.batch = batch;
  trace.input = std::move(input);
  trace.layers.resize(net.layers.size());
  const bool per_example = opt.method.is_stochastic() && opt.noise_scope == NoiseScope::PerExample;
  std::array<double, kGateCount> scores{};
  std::uint64_t node_id = 0;
  const std::vector<double>* prev = &trace.input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    auto& lt = trace.layers[l];
    lt.output.resize(layer.width() * batch);
    if (!per_example) lt.selection.resize(layer.width());
    for (std::size_t n = 0; n < layer.width(); ++n, ++node_id) {
      const double* a = prev->data() + layer.src_a[n] * batch;
      const double* b = prev->data() + layer.src_b[n] * batch;
      double* h = lt.output.data() + n * batch;
      if (!per_example) {
        node_scores(layer.node_logits(n), opt, node_id, 0, scores);
        lt.selection[n] = resolve_selection(scores, opt.method, opt.temperature);
        detail::apply_coeffs(lt.selection[n].forward, a, b, h, batch);
      } else {
        for (std::size_t s = 0; s < batch; ++s) {
          node_scores(layer.node_logits(n), opt, node_id, s + 1, scores);
          h[s] = soft_gate_unchecked(resolve_selection(scores, opt.method, opt.temperature).forward, a[s], b[s]);
        }
      }
    }
    prev = &lt.output;
  }
  detail::groupsum_readout(net, *prev, batch, trace.class_logits);
  return trace;
}

[[nodiscard]] inline ForwardTrace forward(const Network& net, RowMatrix batch, const ForwardOptions& opt) {
  if (batch.cols != net.input_width) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols) + " features, network expects " +
                                std::to_string(net.input_width));
  }
  return forward_feature_major(net, to_feature_major(batch), batch.rows(), opt);
}

[[nodiscard]] inline std::uint64_t first_node_id(const Network& net, std::size_t layer) {
  std::uint64_t id = 0;
  for (std::size_t l = 0; l < layer; ++l) id += net.layers[l].width();
  return id;
}

/// Selection used by (layer, node) for batch position s of a traced forward.
[[nodiscard]] inline NodeSelection traced_selection(const Network& net, const ForwardTrace& trace, std::size_t l,
                                                    std::size_t n, std::size_t s) {
  const auto& lt = trace.layers[l];
  if (!lt.selection.empty()) return lt.selection[n];
  std::array<double, kGateCount> scores{};
  node_scores(net.layers[l].node_logits(n), trace.options, first_node_id(net, l) + n, s + 1, scores);
  return resolve_selection(scores, trace.options.method, trace.options.temperature);
}

/// Reconstructs the node-level record for (layer, node, sample) from a trace.
[[nodiscard]] inline NodeForwardRecord node_record(const Network& net, const ForwardTrace& trace, std::size_t l,
                                                   std::size_t n, std::size_t s) {
  const auto& layer = net.layers[l];
  const auto& prev = l == 0 ? trace.input : trace.layers[l - 1].output;
  const double a = prev[layer.src_a[n] * trace.batch + s];
  const double b = prev[layer.src_b[n] * trace.batch + s];
  const auto sel = traced_selection(net, trace, l, n, s);
  NodeForwardRecord rec;
  rec.method = trace.options.method;
  rec.temperature = trace.options.temperature;
  rec.weights.assign(sel.weights.begin(), sel.weights.end());
  rec.gate_outputs.resize(kGateCount);
  for (std::size_t i = 0; i < kGateCount; ++i) rec.gate_outputs[i] = soft_gate_unchecked(kGates[i].coeffs, a, b);
  if (rec.method.is_hard()) rec.winner = sel.winner;
  rec.h = trace.layers[l].output[n * trace.batch + s];
  return rec;
}

enum class EvalMode {
  Method,          // the method's own training forward
  SoftGateArgmax,  // argmax selection, soft gates on real inputs
  HardGateArgmax,  // argmax selection, Boolean gates on thresholded inputs
};

namespace detail {

inline constexpr std::size_t kEvalChunk = 256;

// Node-major outputs of the last layer for rows [begin, end).
inline std::vector<double> eval_chunk_real(const Network& net, RowMatrix rows, std::size_t begin, std::size_t end,
                                           EvalMode mode, const ForwardOptions& opt,
                                           const std::vector<std::vector<NodeSelection>>& resolved) {
  const std::size_t batch = end - begin;
  std::vector<double> prev(net.input_width * batch);
  for (std::size_t s = 0; s < batch; ++s) {
    const auto r = rows.row(begin + s);
    for (std::size_t d = 0; d < net.input_width; ++d) prev[d * batch + s] = r[d];
  }
  check_unit_interval(prev);
  const bool per_example =
      mode == EvalMode::Method && opt.method.is_stochastic() && opt.noise_scope == NoiseScope::PerExample;
  std::vector<double> cur;
  std::array<double, kGateCount> scores{};
  std::uint64_t node_id = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    cur.assign(layer.width() * batch, 0.0);
    for (std::size_t n = 0; n < layer.width(); ++n, ++node_id) {
      const double* a = prev.data() + layer.src_a[n] * batch;
      const double* b = prev.data() + layer.src_b[n] * batch;
      double* h = cur.data() + n * batch;
      if (mode == EvalMode::SoftGateArgmax) {
        apply_coeffs(kGates[static_cast<std::size_t>(layer.selected_gate(n).index())].coeffs, a, b, h, batch);
      } else if (!per_example) {
        apply_coeffs(resolved[l][n].forward, a, b, h, batch);
      } else {
        for (std::size_t s = 0; s < batch; ++s) {
          node_scores(layer.node_logits(n), opt, node_id, begin + s + 1, scores);
          const auto sel = resolve_selection(scores, opt.method, opt.temperature);
          h[s] = soft_gate_unchecked(sel.forward, a[s], b[s]);
        }
      }
    }
    prev.swap(cur);
  }
  return prev;
}

}  // namespace detail

/// Last-layer outputs (node-major, [n * rows + s]) under one evaluation mode.
/// HardGateArgmax returns exact 0/1 values.
[[nodiscard]] inline std::vector<double> last_layer_outputs(const Network& net, RowMatrix rows, EvalMode mode,
                                                            const ForwardOptions& opt = {}) {
  if (rows.cols != net.input_width) throw std::invalid_argument("evaluation: feature count mismatch");
  const std::size_t total = rows.rows();
  const std::size_t width = net.output_width();
  std::vector<double> out(width * total);
  if (mode == EvalMode::HardGateArgmax) {
    std::vector<std::uint8_t> prev;
    std::vector<std::uint8_t> cur;
    for (std::size_t begin = 0; begin < total; begin += detail::kEvalChunk) {
      const std::size_t end = std::min(total, begin + detail::kEvalChunk);
      const std::size_t batch = end - begin;
      prev.assign(net.input_width * batch, 0);
      for (std::size_t s = 0; s < batch; ++s) {
        const auto r = rows.row(begin + s);
        for (std::size_t d = 0; d < net.input_width; ++d) {
          if (!(r[d] >= 0.0 && r[d] <= 1.0)) throw std::domain_error("network input outside [0,1]");
          prev[d * batch + s] = static_cast<std::uint8_t>(to_int(threshold(r[d])));
        }
      }
      for (const auto& layer : net.layers) {
        cur.assign(layer.width() * batch, 0);
        for (std::size_t n = 0; n < layer.width(); ++n) {
          const auto& spec = gate_spec(layer.selected_gate(n));
          const std::uint8_t* a = prev.data() + layer.src_a[n] * batch;
          const std::uint8_t* b = prev.data() + layer.src_b[n] * batch;
          std::uint8_t* h = cur.data() + n * batch;
          for (std::size_t s = 0; s < batch; ++s) {
            h[s] = static_cast<std::uint8_t>(
                to_int(hard_gate_eval(spec, static_cast<Bit>(a[s]), static_cast<Bit>(b[s]))));
          }
        }
        prev.swap(cur);
      }
      for (std::size_t n = 0; n < width; ++n) {
        for (std::size_t s = 0; s < batch; ++s) out[n * total + begin + s] = prev[n * batch + s];
      }
    }
    return out;
  }
  if (mode == EvalMode::Method) check_temperature(opt.temperature, "evaluation");
  // Per-step selections are resolved once and shared by every chunk.
  std::vector<std::vector<NodeSelection>> resolved(net.layers.size());
  if (mode == EvalMode::Method) {
    std::array<double, kGateCount> scores{};
    std::uint64_t node_id = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      resolved[l].resize(net.layers[l].width());
      for (std::size_t n = 0; n < net.layers[l].width(); ++n, ++node_id) {
        node_scores(net.layers[l].node_logits(n), opt, node_id, 0, scores);
        resolved[l][n] = resolve_selection(scores, opt.method, opt.temperature);
      }
    }
  }
  for (std::size_t begin = 0; begin < total; begin += detail::kEvalChunk) {
    const std::size_t end = std::min(total, begin + detail::kEvalChunk);
    const auto chunk = detail::eval_chunk_real(net, rows, begin, end, mode, opt, resolved);
    const std::size_t batch = end - begin;
    for (std::size_t n = 0; n < width; ++n) {
      std::copy_n(chunk.data() + n * batch, batch, out.data() + n * total + begin);
    }
  }
  return out;
}

/// Class logits (sample-major) under one evaluation mode.
[[nodiscard]] inline std::vector<double> forward_eval_mode(const Network& net, RowMatrix rows, EvalMode mode,
                                                           const ForwardOptions& opt = {}) {
  const auto last = last_layer_outputs(net, rows, mode, opt);
  std::vector<double> logits;
  if (mode == EvalMode::HardGateArgmax) {
    // Integer group sums first, then the same tau scaling.
    const auto& gs = net.groupsum;
    const std::size_t total = rows.rows();
    logits.assign(total * gs.classes, 0.0);
    for (std::size_t c = 0; c < gs.classes; ++c) {
      for (std::size_t s = 0; s < total; ++s) {
        long count = 0;
        for (std::size_t n = c * gs.group_size; n < (c + 1) * gs.group_size; ++n) {
          count += static_cast<long>(last[n * total + s]);
        }
        logits[s * gs.classes + c] = static_cast<double>(count) / gs.tau;
      }
    }
    return logits;
  }
  detail::groupsum_readout(net, last, rows.rows(), logits);
  return logits;
}

/// Integer class scores of the thresholded hard pipeline (sample-major).
[[nodiscard]] inline std::vector<std::int64_t> hard_class_scores(const Network& net, RowMatrix rows) {
  const auto last = last_layer_outputs(net, rows, EvalMode::HardGateArgmax);
  const auto& gs = net.groupsum;
  const std::size_t total = rows.rows();
  std::vector<std::int64_t> scores(total * gs.classes, 0);
  for (std::size_t n = 0; n < net.output_width(); ++n) {
    const std::size_t c = net.class_of(n);
    for (std::size_t s = 0; s < total; ++s) scores[s * gs.classes + c] += static_cast<std::int64_t>(last[n * total + s]);
  }
  return scores;
}

/// Per-row argmax, ties to the lowest class.
template <typename T>
[[nodiscard]] std::vector<std::size_t> predict_classes(std::span<const T> scores, std::size_t classes) {
  std::vector<std::size_t> out(scores.size() / classes);
  for (std::size_t s = 0; s < out.size(); ++s) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (scores[s * classes + c] > scores[s * classes + best]) best = c;
    }
    out[s] = best;
  }
  return out;
}

/// Every wire value (inputs first, then nodes layer by layer) of the hard
/// pipeline for one sample.
[[nodiscard]] inline std::vector<std::uint8_t> hard_wire_values(const Network& net, std::span<const double> row) {
  if (row.size() != net.input_width) throw std::invalid_argument("hard_wire_values: feature count mismatch");
  std::vector<std::uint8_t> wires;
  wires.reserve(net.input_width + net.node_count());
  for (double x : row) wires.push_back(static_cast<std::uint8_t>(to_int(threshold(x))));
  std::size_t offset = 0;
  for (const auto& layer : net.layers) {
    for (std::size_t n = 0; n < layer.width(); ++n) {
      const auto a = static_cast<Bit>(wires[offset + layer.src_a[n]]);
      const auto b = static_cast<Bit>(wires[offset + layer.src_b[n]]);
      wires.push_back(static_cast<std::uint8_t>(to_int(hard_gate_eval(gate_spec(layer.selected_gate(n)), a, b))));
    }
    offset += layer.input_width;
  }
  return wires;
}

// ---------------------------------------------------------------------------
// Checkpoints.
//
//   lgn-checkpoint 1
//   input_width <D>
//   classes <C>
//   group_size <k>
//   groupsum_tau <tau>
//   seed <seed>
//   layers <L>
//   layer <l> <width> <input_width>      (L times, each followed by width lines)
//   <src_a> <src_b> <z_0> ... <z_15>
//   end
//
// Reals are written with max_digits10 significant digits, so a load
// reproduces every logit bit for bit.

inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const Network& net) {
  net.validate();
  os << "lgn-checkpoint " << kCheckpointVersion << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "input_width " << net.input_width << '\n'
     << "classes " << net.groupsum.classes << '\n'
     << "group_size " << net.groupsum.group_size << '\n'
     << "groupsum_tau " << net.groupsum.tau << '\n'
     << "seed " << net.seed << '\n'
     << "layers " << net.layers.size() << '\n';
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    os << "layer " << l << ' ' << layer.width() << ' ' << layer.input_width << '\n';
    for (std::size_t n = 0; n < layer.width(); ++n) {
      os << layer.src_a[n] << ' ' << layer.src_b[n];
      for (double z : layer.node_logits(n)) os << ' ' << z;
      os << '\n';
    }
  }
  os << "end\n";
}

namespace detail {
template <typename T>
T expect_field(std::istream& is, const std::string& key, const std::string& what) {
  std::string got;
  T value{};
  if (!(is >> got) || got != key || !(is >> value)) {
    throw DataError(what + ": expected '" + key + " <value>'" + (got.empty() ? "" : ", found '" + got + "'"));
  }
  return value;
}
}  // namespace detail

[[nodiscard]] inline Network read_checkpoint(std::istream& is, const std::string& what = "checkpoint") {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "lgn-checkpoint") throw DataError(what + ": not an lgn checkpoint");
  if (version != kCheckpointVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  Network net;
  net.input_width = detail::expect_field<std::size_t>(is, "input_width", what);
  net.groupsum.classes = detail::expect_field<std::size_t>(is, "classes", what);
  net.groupsum.group_size = detail::expect_field<std::size_t>(is, "group_size", what);
  net.groupsum.tau = detail::expect_field<double>(is, "groupsum_tau", what);
  net.seed = detail::expect_field<std::uint64_t>(is, "seed", what);
  const auto layers = detail::expect_field<std::size_t>(is, "layers", what);
  constexpr std::size_t kMaxWidth = std::size_t{1} << 26;
  for (std::size_t l = 0; l < layers; ++l) {
    std::string tag;
    std::size_t index = 0;
    std::size_t width = 0;
    Layer layer;
    if (!(is >> tag >> index >> width >> layer.input_width) || tag != "layer" || index != l || width > kMaxWidth) {
      throw DataError(what + ": bad header for layer " + std::to_string(l));
    }
    layer.src_a.resize(width);
    layer.src_b.resize(width);
    layer.logits.resize(width * kGateCount);
    for (std::size_t n = 0; n < width; ++n) {
      is >> layer.src_a[n] >> layer.src_b[n];
      for (auto& z : layer.node_logits(n)) is >> z;
      if (!is) throw DataError(what + ": truncated at layer " + std::to_string(l) + " node " + std::to_string(n));
    }
    net.layers.push_back(std::move(layer));
  }
  std::string end;
  if (!(is >> end) || end != "end") throw DataError(what + ": missing end marker");
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(what + ": " + e.what());
  }
  return net;
}

inline void save_checkpoint(const std::string& path, const Network& net) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write checkpoint " + path);
  write_checkpoint(os, net);
  if (!os) throw DataError("failed writing checkpoint " + path);
}

[[nodiscard]] inline Network load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint(is, path);
}

}  // namespace lgn

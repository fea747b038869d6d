#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgn/errors.hpp"
#include "lgn/gates.hpp"
#include "lgn/network.hpp"
#include "lgn/random.hpp"

namespace lgn {

/// One deployed gate. Wire ids are global: 0..input_width-1 are the inputs,
/// then every node in topological order.
struct CircuitNode {
  GateId gate;
  std::uint32_t src_a = 0;
  std::uint32_t src_b = 0;

  friend bool operator==(const CircuitNode&, const CircuitNode&) = default;
};

struct CompiledCircuit {
  std::size_t input_width = 0;
  std::vector<std::size_t> layer_widths;
  std::vector<CircuitNode> nodes;
  std::size_t classes = 0;
  std::size_t group_size = 0;

  [[nodiscard]] std::size_t wire_count() const { return input_width + nodes.size(); }
  [[nodiscard]] std::size_t output_width() const { return layer_widths.empty() ? 0 : layer_widths.back(); }
  /// Wire id of the first last-layer node.
  [[nodiscard]] std::size_t output_offset() const { return wire_count() - output_width(); }

  void validate() const {
    std::size_t total = 0;
    for (auto w : layer_widths) total += w;
    if (total != nodes.size()) throw std::invalid_argument("circuit: layer widths do not sum to the node count");
    if (nodes.empty()) throw std::invalid_argument("circuit: no gates");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const std::size_t wire = input_width + i;
      if (nodes[i].src_a >= wire || nodes[i].src_b >= wire) {
        throw std::invalid_argument("circuit: node " + std::to_string(i) + " reads a wire that is not earlier");
      }
    }
    if (classes == 0 || group_size == 0 || classes * group_size != output_width()) {
      throw std::invalid_argument("circuit: class groups must partition the final layer");
    }
  }

  friend bool operator==(const CompiledCircuit&, const CompiledCircuit&) = default;
};

/// Argmax gate of every node with its wiring, rebased onto global wire ids.
[[nodiscard]] inline CompiledCircuit extract_circuit(const Network& net) {
  net.validate();
  CompiledCircuit c;
  c.input_width = net.input_width;
  c.classes = net.groupsum.classes;
  c.group_size = net.groupsum.group_size;
  std::size_t offset = 0;  // global id of the current layer's first source
  for (const auto& layer : net.layers) {
    c.layer_widths.push_back(layer.width());
    for (std::size_t n = 0; n < layer.width(); ++n) {
      c.nodes.push_back({layer.selected_gate(n), static_cast<std::uint32_t>(offset + layer.src_a[n]),
                         static_cast<std::uint32_t>(offset + layer.src_b[n])});
    }
    offset += layer.input_width;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Text format
//
//   lgn-circuit 1
//   inputs <D>
//   layers <L> <w_1> ... <w_L>
//   classes <C> <group_size>
//   <GATE_NAME> <src_a> <src_b>        (one line per node, topological order)
//   end

inline void write_circuit(std::ostream& os, const CompiledCircuit& c) {
  c.validate();
  os << "lgn-circuit 1\n";
  os << "inputs " << c.input_width << '\n';
  os << "layers " << c.layer_widths.size();
  for (auto w : c.layer_widths) os << ' ' << w;
  os << '\n' << "classes " << c.classes << ' ' << c.group_size << '\n';
  for (const auto& n : c.nodes) os << gate_spec(n.gate).name << ' ' << n.src_a << ' ' << n.src_b << '\n';
  os << "end\n";
}

[[nodiscard]] inline CompiledCircuit read_circuit(std::istream& is, const std::string& what = "circuit") {
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "lgn-circuit") throw DataError(what + ": not an lgn circuit file");
  if (version != 1) throw DataError(what + ": unsupported version " + std::to_string(version));
  CompiledCircuit c;
  std::size_t layers = 0;
  if (!(is >> tag >> c.input_width) || tag != "inputs") throw DataError(what + ": expected 'inputs <D>'");
  if (!(is >> tag >> layers) || tag != "layers" || layers > 4096) throw DataError(what + ": expected 'layers <L> ...'");
  c.layer_widths.resize(layers);
  std::size_t total = 0;
  for (auto& w : c.layer_widths) {
    if (!(is >> w) || w > (std::size_t{1} << 26)) throw DataError(what + ": bad layer width");
    total += w;
  }
  if (!(is >> tag >> c.classes >> c.group_size) || tag != "classes") {
    throw DataError(what + ": expected 'classes <C> <group_size>'");
  }
  c.nodes.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    std::string name;
    CircuitNode n;
    if (!(is >> name >> n.src_a >> n.src_b)) throw DataError(what + ": truncated at node " + std::to_string(i));
    try {
      n.gate = gate_from_name(name);
    } catch (const std::invalid_argument& e) {
      throw DataError(what + ": node " + std::to_string(i) + ": " + e.what());
    }
    c.nodes.push_back(n);
  }
  if (!(is >> tag) || tag != "end") throw DataError(what + ": missing end marker");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(what + ": " + e.what());
  }
  return c;
}

inline void save_circuit(const std::string& path, const CompiledCircuit& c) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write circuit " + path);
  write_circuit(os, c);
}

[[nodiscard]] inline CompiledCircuit load_circuit(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open circuit " + path);
  return read_circuit(is, path);
}

// ---------------------------------------------------------------------------
// Bit-packed evaluation

using Word = std::uint64_t;
inline constexpr std::size_t kWordBits = 64;

/// Sample-parallel bit matrix: word w of feature d holds samples
/// [64w, 64w + 64) of that feature. Bits past `samples` are zero.
struct BitBatch {
  std::size_t features = 0;
  std::size_t samples = 0;
  std::vector<Word> words;  // feature-major, words_per_feature() per feature

  [[nodiscard]] std::size_t words_per_feature() const { return (samples + kWordBits - 1) / kWordBits; }
  [[nodiscard]] Word word(std::size_t feature, std::size_t w) const { return words[feature * words_per_feature() + w]; }

  /// Thresholds every value (x > 0.5) and packs.
  static BitBatch pack(RowMatrix rows) {
    BitBatch b;
    b.features = rows.cols;
    b.samples = rows.rows();
    const std::size_t wpf = b.words_per_feature();
    b.words.assign(b.features * wpf, 0);
    for (std::size_t s = 0; s < b.samples; ++s) {
      const auto r = rows.row(s);
      for (std::size_t d = 0; d < b.features; ++d) {
        if (threshold(r[d]) == Bit::One) b.words[d * wpf + s / kWordBits] |= Word{1} << (s % kWordBits);
      }
    }
    return b;
  }
};

[[nodiscard]] constexpr Word gate_word(GateId g, Word a, Word b) {
  switch (g.index()) {
    case 0: return 0;
    case 1: return a & b;
    case 2: return a & ~b;
    case 3: return a;
    case 4: return ~a & b;
    case 5: return b;
    case 6: return a ^ b;
    case 7: return a | b;
    case 8: return ~(a | b);
    case 9: return ~(a ^ b);
    case 10: return ~b;
    case 11: return a | ~b;
    case 12: return ~a;
    case 13: return ~a | b;
    case 14: return ~(a & b);
    default: return ~Word{0};
  }
}

/// Integer class scores (sample-major, samples x classes).
[[nodiscard]] inline std::vector<std::int64_t> eval_bitpacked(const CompiledCircuit& c, const BitBatch& batch) {
  if (batch.features != c.input_width) {
    throw std::invalid_argument("eval_bitpacked: batch has " + std::to_string(batch.features) +
                                " features, circuit expects " + std::to_string(c.input_width));
  }
  const std::size_t wpf = batch.words_per_feature();
  const std::size_t planes = static_cast<std::size_t>(std::bit_width(c.group_size));
  std::vector<Word> wires(c.wire_count());
  std::vector<Word> counter(c.classes * planes);
  std::vector<std::int64_t> scores(batch.samples * c.classes, 0);
  const std::size_t out0 = c.output_offset();
  for (std::size_t w = 0; w < wpf; ++w) {
    const std::size_t base = w * kWordBits;
    const std::size_t live = std::min(kWordBits, batch.samples - base);
    const Word mask = live == kWordBits ? ~Word{0} : (Word{1} << live) - 1;
    for (std::size_t d = 0; d < c.input_width; ++d) wires[d] = batch.word(d, w);
    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
      const auto& n = c.nodes[i];
      wires[c.input_width + i] = gate_word(n.gate, wires[n.src_a], wires[n.src_b]);
    }
    // Vertical (bit-sliced) counters: plane p of class k holds bit p of every
    // sample's running count.
    std::fill(counter.begin(), counter.end(), 0);
    for (std::size_t n = 0; n < c.output_width(); ++n) {
      Word carry = wires[out0 + n] & mask;
      Word* plane = counter.data() + (n / c.group_size) * planes;
      for (std::size_t p = 0; p < planes && carry != 0; ++p) {
        const Word next = plane[p] & carry;
        plane[p] ^= carry;
        carry = next;
      }
    }
    for (std::size_t k = 0; k < c.classes; ++k) {
      const Word* plane = counter.data() + k * planes;
      for (std::size_t s = 0; s < live; ++s) {
        std::int64_t v = 0;
        for (std::size_t p = 0; p < planes; ++p) v |= static_cast<std::int64_t>((plane[p] >> s) & 1U) << p;
        scores[(base + s) * c.classes + k] = v;
      }
    }
  }
  return scores;
}

/// Scalar reference: every wire value for one sample.
[[nodiscard]] inline std::vector<std::uint8_t> circuit_wire_values(const CompiledCircuit& c,
                                                                   std::span<const double> row) {
  if (row.size() != c.input_width) throw std::invalid_argument("circuit_wire_values: feature count mismatch");
  std::vector<std::uint8_t> wires;
  wires.reserve(c.wire_count());
  for (double x : row) wires.push_back(static_cast<std::uint8_t>(to_int(threshold(x))));
  for (const auto& n : c.nodes) {
    wires.push_back(static_cast<std::uint8_t>(
        to_int(hard_gate_eval(gate_spec(n.gate), static_cast<Bit>(wires[n.src_a]), static_cast<Bit>(wires[n.src_b])))));
  }
  return wires;
}

struct EquivalenceReport {
  bool passed = true;
  std::size_t samples = 0;
  std::size_t score_mismatches = 0;
  std::size_t prediction_mismatches = 0;
  std::optional<std::size_t> first_sample;
  std::optional<std::size_t> first_wire;  // global wire id

  [[nodiscard]] std::string describe() const {
    std::ostringstream os;
    if (samples == 0) {
      os << "pass (vacuous): 0 samples";
    } else if (passed) {
      os << "pass: " << samples << " samples bit-exact";
    } else {
      os << "FAIL: " << prediction_mismatches << " prediction and " << score_mismatches << " score mismatches in "
         << samples << " samples";
      if (first_sample) os << "; first at sample " << *first_sample;
      if (first_wire) os << ", first divergent wire " << *first_wire;
    }
    return os.str();
  }
};

/// Compares the bit-packed circuit against the thresholded network pipeline
/// on the given inputs.
[[nodiscard]] inline EquivalenceReport verify_equivalence(const CompiledCircuit& c, const Network& net,
                                                          RowMatrix inputs) {
  if (c.input_width != net.input_width || inputs.cols != c.input_width) {
    throw std::invalid_argument("verify_equivalence: input width mismatch");
  }
  EquivalenceReport rep;
  rep.samples = inputs.rows();
  if (rep.samples == 0) return rep;
  const auto packed = eval_bitpacked(c, BitBatch::pack(inputs));
  const auto reference = hard_class_scores(net, inputs);
  const auto pp = predict_classes<std::int64_t>(packed, c.classes);
  const auto pr = predict_classes<std::int64_t>(reference, c.classes);
  for (std::size_t s = 0; s < rep.samples; ++s) {
    bool scores_match = true;
    for (std::size_t k = 0; k < c.classes; ++k) {
      scores_match = scores_match && packed[s * c.classes + k] == reference[s * c.classes + k];
    }
    if (!scores_match) ++rep.score_mismatches;
    if (pp[s] != pr[s]) ++rep.prediction_mismatches;
    if ((!scores_match || pp[s] != pr[s]) && !rep.first_sample) rep.first_sample = s;
  }
  rep.passed = rep.score_mismatches == 0 && rep.prediction_mismatches == 0;
  if (rep.first_sample) {
    const auto row = inputs.row(*rep.first_sample);
    const auto a = circuit_wire_values(c, row);
    const auto b = hard_wire_values(net, row);
    for (std::size_t w = 0; w < std::min(a.size(), b.size()); ++w) {
      if (a[w] != b[w]) {
        rep.first_wire = w;
        break;
      }
    }
  }
  return rep;
}

/// Uniform random binary inputs.
[[nodiscard]] inline std::vector<double> random_binary_rows(std::size_t width, std::size_t samples, std::uint64_t seed) {
  std::vector<double> rows(width * samples);
  auto rng = keyed_stream(seed, stream_tag::kData, 0xb17ULL);
  for (auto& x : rows) x = static_cast<double>(rng() >> 63);
  return rows;
}

/// Every input pattern of a circuit whose width is at most 24.
[[nodiscard]] inline std::vector<double> exhaustive_binary_rows(std::size_t width) {
  if (width > 24) throw std::invalid_argument("exhaustive_binary_rows: width above 24");
  const std::size_t n = std::size_t{1} << width;
  std::vector<double> rows(width * n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t d = 0; d < width; ++d) rows[s * width + d] = static_cast<double>((s >> d) & 1U);
  }
  return rows;
}

[[nodiscard]] inline EquivalenceReport verify_equivalence(const CompiledCircuit& c, const Network& net,
                                                          std::size_t samples, std::uint64_t seed) {
  const auto rows = random_binary_rows(c.input_width, samples, seed);
  return verify_equivalence(c, net, RowMatrix{rows, c.input_width});
}

}  // namespace lgn

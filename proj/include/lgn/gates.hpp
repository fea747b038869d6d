#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "lgn/random.hpp"

namespace lgn {

inline constexpr int kNumGates = 16;

/// Index of one of the 16 two-input Boolean gates.
///
/// The index doubles as the truth table: bit 3 is the output on (0,0),
/// bit 2 on (0,1), bit 1 on (1,0) and bit 0 on (1,1). Negating a gate is
/// therefore `15 - index`.
class GateId {
public:
  constexpr GateId() = default;
  constexpr explicit GateId(int index) : index_(check(index)) {}

  [[nodiscard]] constexpr int index() const { return index_; }
  [[nodiscard]] constexpr GateId negated() const { return GateId(15 - index_); }

  friend constexpr bool operator==(GateId, GateId) = default;

private:
  static constexpr int check(int index) {
    if (index < 0 || index >= kNumGates) {
      throw std::out_of_range("gate index " + std::to_string(index) + " outside [0,15]");
    }
    return index;
  }
  int index_ = 0;
};

namespace gate {
inline constexpr GateId False{0};
inline constexpr GateId And{1};
inline constexpr GateId AAndNotB{2};
inline constexpr GateId A{3};
inline constexpr GateId NotAAndB{4};
inline constexpr GateId B{5};
inline constexpr GateId Xor{6};
inline constexpr GateId Or{7};
inline constexpr GateId Nor{8};
inline constexpr GateId Xnor{9};
inline constexpr GateId NotB{10};
inline constexpr GateId AOrNotB{11};
inline constexpr GateId NotA{12};
inline constexpr GateId NotAOrB{13};
inline constexpr GateId Nand{14};
inline constexpr GateId True{15};
}  // namespace gate

/// A Boolean value produced by thresholding. Only `threshold()` and the hard
/// gate evaluators create these.
enum class Bit : std::uint8_t { Zero = 0, One = 1 };

[[nodiscard]] constexpr int to_int(Bit b) { return static_cast<int>(b); }
[[nodiscard]] constexpr Bit make_bit(bool v) { return v ? Bit::One : Bit::Zero; }

/// Soft form g(a,b) = c0 + c1*a + c2*b + c3*a*b, plus the hard truth table.
struct GateSpec {
  GateId id;
  std::array<double, 4> coeffs;
  std::uint8_t truth_table;  // bit (3 - 2a - b) is the output on (a,b)
  std::string_view name;
};

// Product t-norm / probabilistic sum relaxations. Every soft formula is
// affine in a and b plus one bilinear term.
inline constexpr std::array<GateSpec, kNumGates> kGates{{
    {GateId{0}, {0, 0, 0, 0}, 0b0000, "FALSE"},
    {GateId{1}, {0, 0, 0, 1}, 0b0001, "AND"},
    {GateId{2}, {0, 1, 0, -1}, 0b0010, "A_AND_NOT_B"},
    {GateId{3}, {0, 1, 0, 0}, 0b0011, "A"},
    {GateId{4}, {0, 0, 1, -1}, 0b0100, "NOT_A_AND_B"},
    {GateId{5}, {0, 0, 1, 0}, 0b0101, "B"},
    {GateId{6}, {0, 1, 1, -2}, 0b0110, "XOR"},
    {GateId{7}, {0, 1, 1, -1}, 0b0111, "OR"},
    {GateId{8}, {1, -1, -1, 1}, 0b1000, "NOR"},
    {GateId{9}, {1, -1, -1, 2}, 0b1001, "XNOR"},
    {GateId{10}, {1, 0, -1, 0}, 0b1010, "NOT_B"},
    {GateId{11}, {1, 0, -1, 1}, 0b1011, "A_OR_NOT_B"},
    {GateId{12}, {1, -1, 0, 0}, 0b1100, "NOT_A"},
    {GateId{13}, {1, -1, 0, 1}, 0b1101, "NOT_A_OR_B"},
    {GateId{14}, {1, 0, 0, -1}, 0b1110, "NAND"},
    {GateId{15}, {1, 0, 0, 0}, 0b1111, "TRUE"},
}};

[[nodiscard]] constexpr const GateSpec& gate_spec(GateId id) { return kGates[static_cast<std::size_t>(id.index())]; }

[[nodiscard]] inline GateId gate_from_name(std::string_view name) {
  for (const auto& g : kGates) {
    if (g.name == name) return g.id;
  }
  throw std::invalid_argument("unknown gate name '" + std::string(name) + "'");
}

/// Bilinear evaluation without range checks; the hot loops use this.
[[nodiscard]] constexpr double soft_gate_unchecked(const std::array<double, 4>& c, double a, double b) {
  return c[0] + c[1] * a + c[2] * b + c[3] * (a * b);
}

[[nodiscard]] inline double soft_gate_eval(const GateSpec& g, double a, double b) {
  if (!(a >= 0.0 && a <= 1.0) || !(b >= 0.0 && b <= 1.0)) {
    throw std::domain_error("soft_gate_eval: inputs must lie in [0,1], got (" + std::to_string(a) + ", " +
                            std::to_string(b) + ")");
  }
  return soft_gate_unchecked(g.coeffs, a, b);
}

/// Partial derivatives of the soft form.
[[nodiscard]] constexpr double soft_gate_da(const std::array<double, 4>& c, double b) { return c[1] + c[3] * b; }
[[nodiscard]] constexpr double soft_gate_db(const std::array<double, 4>& c, double a) { return c[2] + c[3] * a; }

[[nodiscard]] constexpr bool truth_table_bit(std::uint8_t table, bool a, bool b) {
  const int shift = 3 - 2 * static_cast<int>(a) - static_cast<int>(b);
  return ((table >> shift) & 1U) != 0U;
}

[[nodiscard]] constexpr Bit hard_gate_eval(const GateSpec& g, Bit a, Bit b) {
  return make_bit(truth_table_bit(g.truth_table, a == Bit::One, b == Bit::One));
}

/// 1 iff x > 0.5; exactly 0.5 maps to 0.
[[nodiscard]] constexpr Bit threshold(double x) { return make_bit(x > 0.5); }

/// Exact mean of |g_soft - g_hard(threshold(a), threshold(b))| over the unit
/// square, by integrating the bilinear form over the four threshold quadrants.
[[nodiscard]] inline double computation_gap_uniform(const GateSpec& g) {
  // Integral of c0 + c1 a + c2 b + c3 ab over [a0,a1] x [b0,b1].
  const auto integrate = [&g](double a0, double a1, double b0, double b1) {
    const double da = a1 - a0;
    const double db = b1 - b0;
    const double ia = 0.5 * (a1 * a1 - a0 * a0);
    const double ib = 0.5 * (b1 * b1 - b0 * b0);
    return g.coeffs[0] * da * db + g.coeffs[1] * ia * db + g.coeffs[2] * da * ib + g.coeffs[3] * ia * ib;
  };
  double total = 0.0;
  for (int qa = 0; qa < 2; ++qa) {
    for (int qb = 0; qb < 2; ++qb) {
      const double a0 = 0.5 * qa;
      const double b0 = 0.5 * qb;
      const double soft = integrate(a0, a0 + 0.5, b0, b0 + 0.5);
      // g_soft stays in [0,1], so |g_soft - h| is g_soft for h = 0 and 1 - g_soft for h = 1.
      const bool hard = truth_table_bit(g.truth_table, qa == 1, qb == 1);
      total += hard ? 0.25 - soft : soft;
    }
  }
  return total;
}

struct UniformInputs {};
struct BinaryInputs {};
/// Draws a and b independently from a pool of observed feature values.
struct EmpiricalInputs {
  std::span<const double> values;
};
using InputSampler = std::variant<UniformInputs, BinaryInputs, EmpiricalInputs>;

struct GapEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Monte Carlo estimate of E|g_soft(a,b) - g_hard(a,b)| under `sampler`.
[[nodiscard]] inline GapEstimate computation_gap_empirical(const GateSpec& g, const InputSampler& sampler,
                                                           std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("computation_gap_empirical: n must be >= 1");
  if (const auto* e = std::get_if<EmpiricalInputs>(&sampler); e != nullptr && e->values.empty()) {
    throw std::invalid_argument("computation_gap_empirical: empty empirical pool");
  }
  auto rng = keyed_stream(seed, stream_tag::kData, static_cast<std::uint64_t>(g.id.index()));
  const auto draw = [&]() -> double {
    return std::visit(
        [&](const auto& s) -> double {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, UniformInputs>) {
            return rng.open_unit();
          } else if constexpr (std::is_same_v<S, BinaryInputs>) {
            return static_cast<double>(rng() >> 63);
          } else {
            return s.values[static_cast<std::size_t>(rng() % s.values.size())];
          }
        },
        sampler);
  };
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = draw();
    const double b = draw();
    const double soft = soft_gate_unchecked(g.coeffs, a, b);
    const double hard = to_int(hard_gate_eval(g, threshold(a), threshold(b)));
    const double d = std::abs(soft - hard);
    sum += d;
    sum_sq += d * d;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = n > 1 ? std::max(0.0, (sum_sq - nn * mean * mean) / (nn - 1.0)) : 0.0;
  return {mean, std::sqrt(var / nn), n};
}

}  // namespace lgn

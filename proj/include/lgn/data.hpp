#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgn/errors.hpp"
#include "lgn/network.hpp"
#include "lgn/random.hpp"

namespace lgn {

/// Labelled samples with features in [0,1], stored row-major.
struct Dataset {
  std::string name;
  std::size_t dims = 0;
  std::size_t classes = 0;
  std::vector<double> features;
  std::vector<std::int32_t> labels;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] RowMatrix view() const { return {features, dims}; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return {features.data() + i * dims, dims}; }

  void validate() const {
    if (dims == 0) throw DataError(name + ": zero feature width");
    if (features.size() != dims * labels.size()) throw DataError(name + ": feature/label count mismatch");
    for (double x : features) {
      if (!(x >= 0.0 && x <= 1.0)) throw DataError(name + ": feature outside [0,1]");
    }
    for (auto y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw DataError(name + ": label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
      }
    }
  }

  [[nodiscard]] bool is_binary() const {
    return std::all_of(features.begin(), features.end(), [](double x) { return x == 0.0 || x == 1.0; });
  }
};

// ---------------------------------------------------------------------------
// IDX files

struct IdxArray {
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {
inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}
}  // namespace detail

/// Parses an unsigned-byte IDX file (images 0x803 or labels 0x801). Every
/// declared dimension is checked against the file size before allocation.
[[nodiscard]] inline IdxArray load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open IDX file");
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  unsigned char head[4];
  if (!in.read(reinterpret_cast<char*>(head), 4)) throw DataError(path + ": truncated IDX header");
  const std::uint32_t magic = detail::read_be32(head);
  if (magic != kIdxImagesMagic && magic != kIdxLabelsMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", magic);
    throw DataError(path + ": bad IDX magic " + buf + " (expected 0x00000803 or 0x00000801)");
  }
  const std::size_t ndim = magic & 0xFF;
  IdxArray out;
  std::uint64_t count = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    if (!in.read(reinterpret_cast<char*>(head), 4)) throw DataError(path + ": truncated IDX dimension table");
    const std::uint32_t n = detail::read_be32(head);
    if (n != 0 && count > std::numeric_limits<std::uint64_t>::max() / n) {
      throw DataError(path + ": IDX dimensions overflow");
    }
    count *= n;
    out.shape.push_back(n);
  }
  const std::uint64_t header = 4 + 4 * static_cast<std::uint64_t>(ndim);
  if (count > std::numeric_limits<std::size_t>::max() || count > (std::uint64_t{1} << 40)) {
    throw DataError(path + ": IDX dimensions overflow");
  }
  if (file_size < header + count) {
    throw DataError(path + ": truncated IDX payload: expected " + std::to_string(header + count) + " bytes, found " +
                    std::to_string(file_size));
  }
  out.bytes.resize(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char*>(out.bytes.data()), static_cast<std::streamsize>(count));
  if (!in) throw DataError(path + ": read error");
  return out;
}

/// Images (N x rows x cols) and labels from two IDX files, pixels scaled by /255.
[[nodiscard]] inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                              std::size_t classes = 10) {
  const auto images = load_idx(images_path);
  const auto labels = load_idx(labels_path);
  if (images.shape.size() < 2) throw DataError(images_path + ": expected an image array");
  if (labels.shape.size() != 1) throw DataError(labels_path + ": expected a one-dimensional label array");
  if (images.shape[0] != labels.shape[0]) {
    throw DataError(images_path + ": " + std::to_string(images.shape[0]) + " images but " +
                    std::to_string(labels.shape[0]) + " labels");
  }
  Dataset ds;
  ds.name = images_path;
  ds.classes = classes;
  ds.dims = images.bytes.size() / std::max<std::size_t>(1, images.shape[0]);
  ds.features.resize(images.bytes.size());
  std::transform(images.bytes.begin(), images.bytes.end(), ds.features.begin(),
                 [](std::uint8_t b) { return static_cast<double>(b) / 255.0; });
  ds.labels.resize(labels.bytes.size());
  for (std::size_t i = 0; i < labels.bytes.size(); ++i) {
    if (labels.bytes[i] >= classes) {
      throw DataError(labels_path + ": label " + std::to_string(labels.bytes[i]) + " at index " + std::to_string(i) +
                      " outside [0," + std::to_string(classes) + ")");
    }
    ds.labels[i] = labels.bytes[i];
  }
  return ds;
}

enum class Split { Train, Test };

[[nodiscard]] inline Dataset load_mnist(const std::filesystem::path& dir, Split split) {
  const std::string prefix = split == Split::Train ? "train" : "t10k";
  auto ds = load_idx_dataset((dir / (prefix + "-images-idx3-ubyte")).string(),
                             (dir / (prefix + "-labels-idx1-ubyte")).string());
  ds.name = split == Split::Train ? "mnist-train" : "mnist-test";
  return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: 3073-byte records, one label byte followed by the
// red, green and blue 32x32 planes.

inline constexpr std::size_t kCifarPixels = 32 * 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarRecord = 1 + kCifarChannels * kCifarPixels;

inline void append_cifar_batch(const std::string& path, Dataset& ds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open CIFAR batch");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (size == 0 || size % kCifarRecord != 0) {
    throw DataError(path + ": size " + std::to_string(size) + " is not a multiple of the 3073-byte record");
  }
  std::vector<std::uint8_t> buf(size);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!in) throw DataError(path + ": read error");
  const std::size_t n = size / kCifarRecord;
  ds.dims = kCifarChannels * kCifarPixels;
  ds.classes = 10;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = buf.data() + r * kCifarRecord;
    if (rec[0] >= 10) throw DataError(path + ": label " + std::to_string(rec[0]) + " in record " + std::to_string(r));
    ds.labels.push_back(rec[0]);
    for (std::size_t i = 1; i < kCifarRecord; ++i) ds.features.push_back(static_cast<double>(rec[i]) / 255.0);
  }
}

[[nodiscard]] inline Dataset load_cifar10(const std::filesystem::path& dir, Split split) {
  Dataset ds;
  ds.name = split == Split::Train ? "cifar10-train" : "cifar10-test";
  if (split == Split::Train) {
    for (int b = 1; b <= 5; ++b) append_cifar_batch((dir / ("data_batch_" + std::to_string(b) + ".bin")).string(), ds);
  } else {
    append_cifar_batch((dir / "test_batch.bin").string(), ds);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Binarisation

/// 1[x > theta] feature-wise.
[[nodiscard]] inline Dataset binarize_threshold(const Dataset& in, double theta = 0.5) {
  Dataset out = in;
  for (auto& x : out.features) x = x > theta ? 1.0 : 0.0;
  return out;
}

inline constexpr std::size_t kThermometerLevels = 31;

/// Thresholds 255*j/(levels+1) for j = 1..levels: interior points of [0,255].
[[nodiscard]] inline std::vector<double> thermometer_thresholds(std::size_t levels = kThermometerLevels) {
  std::vector<double> t(levels);
  for (std::size_t j = 1; j <= levels; ++j) t[j - 1] = 255.0 * static_cast<double>(j) / static_cast<double>(levels + 1);
  return t;
}

/// Expands channel-major raw intensities (channels x pixels, 0..255) into
/// thermometer bits laid out as [(c * levels + t) * pixels + p].
[[nodiscard]] inline std::vector<double> binarize_thermometer(std::span<const double> raw, std::size_t channels,
                                                              std::size_t levels = kThermometerLevels) {
  if (channels == 0 || raw.size() % channels != 0) throw std::invalid_argument("thermometer: bad channel count");
  const std::size_t pixels = raw.size() / channels;
  const auto thr = thermometer_thresholds(levels);
  std::vector<double> out(channels * levels * pixels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < levels; ++t) {
      for (std::size_t p = 0; p < pixels; ++p) {
        out[(c * levels + t) * pixels + p] = raw[c * pixels + p] > thr[t] ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

/// Thermometer-encodes every sample of a [0,1]-scaled dataset whose rows are
/// channel-major planes.
[[nodiscard]] inline Dataset binarize_thermometer(const Dataset& in, std::size_t channels,
                                                  std::size_t levels = kThermometerLevels) {
  Dataset out;
  out.name = in.name + "-thermometer";
  out.classes = in.classes;
  out.labels = in.labels;
  out.dims = in.dims * levels;
  out.features.reserve(out.dims * in.size());
  std::vector<double> raw(in.dims);
  for (std::size_t s = 0; s < in.size(); ++s) {
    const auto r = in.row(s);
    for (std::size_t d = 0; d < in.dims; ++d) raw[d] = std::round(r[d] * 255.0);
    const auto bits = binarize_thermometer(raw, channels, levels);
    out.features.insert(out.features.end(), bits.begin(), bits.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subsets

/// Seeded Fisher-Yates shuffle of the sample order, then the first n samples.
/// n = 0 or n >= size keeps every sample (still shuffled).
[[nodiscard]] inline Dataset shuffled_subset(const Dataset& in, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(in.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = keyed_stream(seed, stream_tag::kData, 0x5b);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[detail::uniform_index(rng, i)]);
  if (n == 0 || n > order.size()) n = order.size();
  Dataset out;
  out.name = in.name;
  out.dims = in.dims;
  out.classes = in.classes;
  out.features.reserve(n * in.dims);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = in.row(order[i]);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(in.labels[order[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class SyntheticKind { Parity, TwoMoonsBinarized, RandomTeacherCircuit };

[[nodiscard]] inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "parity") return SyntheticKind::Parity;
  if (s == "two-moons-binarized") return SyntheticKind::TwoMoonsBinarized;
  if (s == "random-teacher-circuit") return SyntheticKind::RandomTeacherCircuit;
  throw std::invalid_argument("unknown synthetic task '" + s +
                              "' (expected parity, two-moons-binarized or random-teacher-circuit)");
}

/// Hidden circuit behind the teacher task: two layers of random gates whose
/// logits are forced one-hot.
[[nodiscard]] inline Network make_teacher(std::size_t dims, std::uint64_t seed, std::size_t width = 16) {
  auto net = build_network({dims, 2, width, 2}, mix64(seed, 0x7eac4e5ULL));
  auto rng = keyed_stream(seed, stream_tag::kData, 0x7eac4e5ULL);
  for (auto& layer : net.layers) {
    for (std::size_t n = 0; n < layer.width(); ++n) {
      // Constant gates would only shrink the teacher, so draw from the 14 others.
      const std::size_t g = 1 + detail::uniform_index(rng, kGateCount - 2);
      auto z = layer.node_logits(n);
      std::fill(z.begin(), z.end(), 0.0);
      z[g] = 50.0;
    }
  }
  return net;
}

/// Deterministic labelled task. Different `split` values draw fresh samples
/// from the same task (and the same teacher). For parity, samples = 0
/// enumerates all 2^dims inputs.
[[nodiscard]] inline Dataset synthetic_task(SyntheticKind kind, std::size_t dims, std::size_t samples,
                                            std::uint64_t seed, std::uint64_t split = 0) {
  if (dims < 2) throw std::invalid_argument("synthetic_task: dims must be >= 2");
  Dataset ds;
  ds.dims = dims;
  ds.classes = 2;
  auto rng = keyed_stream(seed, stream_tag::kData, static_cast<std::uint64_t>(kind) + 1, split);
  switch (kind) {
    case SyntheticKind::Parity: {
      ds.name = "parity";
      const bool enumerate = samples == 0;
      if (enumerate) {
        if (dims > 24) throw std::invalid_argument("synthetic_task: cannot enumerate parity beyond 24 bits");
        samples = std::size_t{1} << dims;
      }
      for (std::size_t s = 0; s < samples; ++s) {
        int parity = 0;
        for (std::size_t d = 0; d < dims; ++d) {
          const int bit = enumerate ? static_cast<int>((s >> (dims - 1 - d)) & 1U) : static_cast<int>(rng() >> 63);
          parity ^= bit;
          ds.features.push_back(bit);
        }
        ds.labels.push_back(parity);
      }
      break;
    }
    case SyntheticKind::TwoMoonsBinarized: {
      ds.name = "two-moons-binarized";
      // Each coordinate is rescaled to [0,1] and thermometer-coded; x gets
      // dims/2 levels and y the rest.
      const std::size_t qx = dims / 2;
      const std::size_t qy = dims - qx;
      std::normal_distribution<double> noise(0.0, 0.1);
      std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
      for (std::size_t s = 0; s < samples; ++s) {
        const int label = static_cast<int>(rng() >> 63);
        const double t = angle(rng);
        double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
        double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
        x = std::clamp((x + noise(rng) + 1.25) / 3.5, 0.0, 1.0);
        y = std::clamp((y + noise(rng) + 0.75) / 2.0, 0.0, 1.0);
        for (std::size_t j = 1; j <= qx; ++j) ds.features.push_back(x > static_cast<double>(j) / (qx + 1) ? 1.0 : 0.0);
        for (std::size_t j = 1; j <= qy; ++j) ds.features.push_back(y > static_cast<double>(j) / (qy + 1) ? 1.0 : 0.0);
        ds.labels.push_back(label);
      }
      break;
    }
    case SyntheticKind::RandomTeacherCircuit: {
      ds.name = "random-teacher-circuit";
      const auto teacher = make_teacher(dims, seed);
      ds.features.resize(samples * dims);
      for (auto& x : ds.features) x = static_cast<double>(rng() >> 63);
      const auto scores = hard_class_scores(teacher, ds.view());
      const auto pred = predict_classes<std::int64_t>(scores, 2);
      ds.labels.assign(pred.begin(), pred.end());
      break;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Input-distribution report

/// Fractions of feature values in each bin. The bins partition [0,1]:
/// {0}, (0,0.1), [0.1,0.9], (0.9,1]. Binary-like is x < 0.1 or x > 0.9.
struct PixelReport {
  double exactly_zero = 0.0;
  double low = 0.0;
  double middle = 0.0;
  double high = 0.0;
  double binary_like = 0.0;
  std::size_t values = 0;
};

[[nodiscard]] inline PixelReport pixel_distribution_report(std::span<const double> features) {
  std::array<std::size_t, 4> counts{};
  for (double x : features) {
    if (!(x >= 0.0 && x <= 1.0)) throw DataError("pixel report: value outside [0,1]");
    if (x == 0.0) {
      ++counts[0];
    } else if (x < 0.1) {
      ++counts[1];
    } else if (x <= 0.9) {
      ++counts[2];
    } else {
      ++counts[3];
    }
  }
  PixelReport r;
  r.values = features.size();
  if (r.values == 0) return r;
  const double n = static_cast<double>(r.values);
  r.exactly_zero = static_cast<double>(counts[0]) / n;
  r.low = static_cast<double>(counts[1]) / n;
  r.middle = static_cast<double>(counts[2]) / n;
  r.high = static_cast<double>(counts[3]) / n;
  r.binary_like = static_cast<double>(counts[0] + counts[1] + counts[3]) / n;
  return r;
}

}  // namespace lgn

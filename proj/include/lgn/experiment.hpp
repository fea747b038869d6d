#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lgn/circuit.hpp"
#include "lgn/data.hpp"
#include "lgn/errors.hpp"
#include "lgn/metrics.hpp"
#include "lgn/network.hpp"
#include "lgn/training.hpp"

namespace lgn {

namespace fs = std::filesystem;

/// Flat key/value view of a configuration: keys are flag names without the
/// leading dashes.
using ConfigMap = std::map<std::string, std::string>;

/// Reads `key = value` lines. `[section]` headers prefix the keys that follow
/// with "section-", so `[cage]` + `tau-min = 0.5` sets `cage-tau-min`.
/// Blank lines and lines starting with '#' are ignored.
[[nodiscard]] inline ConfigMap parse_config_text(std::istream& in, const std::string& what = "config") {
  ConfigMap out;
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(what + ":" + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(what + ":" + std::to_string(lineno) + ": expected 'key = value'");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(what + ":" + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "-" + key;
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

[[nodiscard]] inline ConfigMap load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config_text(in, path.string());
}

/// The six method labels: the four estimators plus the CAGE variants of the
/// two hard ones.
struct MethodLabel {
  MethodConfig method;
  bool cage = false;

  [[nodiscard]] std::string name() const { return std::string(method.name()) + (cage ? "-cage" : ""); }
};

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"soft-mix", "soft-gumbel", "hard-st", "gumbel-st", "hard-st-cage",
                                              "gumbel-st-cage"};
  return names;
}

[[nodiscard]] inline MethodLabel parse_method_label(const std::string& s) {
  const bool cage = s.size() > 5 && s.ends_with("-cage");
  const std::string base = cage ? s.substr(0, s.size() - 5) : s;
  try {
    const auto m = parse_method(base);
    if (cage && !m.is_hard()) throw std::invalid_argument("");
    return {m, cage};
  } catch (const std::invalid_argument&) {
    throw ConfigError("method: unknown method '" + s +
                      "' (expected soft-mix, soft-gumbel, hard-st, gumbel-st, hard-st-cage or gumbel-st-cage)");
  }
}

struct ExperimentConfig {
  // data
  std::string dataset = "mnist-binary";
  std::string data_dir;
  std::string binarize = "auto";  // auto | none | threshold | thermometer
  std::size_t subset = 10000;
  std::size_t test_subset = 0;
  std::uint64_t data_seed = 0;
  std::size_t synthetic_dims = 16;
  std::size_t synthetic_samples = 4096;
  // architecture
  std::size_t layers = 3;
  std::size_t width = 8000;
  std::size_t classes = 0;  // 0 = take it from the dataset
  // training
  MethodLabel method{MethodConfig::hard_st(), false};
  double tau = 1.0;
  std::vector<double> tau_grid{0.05, 0.1, 0.5, 1.0, 2.0};
  std::vector<std::string> methods{"hard-st"};
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t iters = 10000;
  std::size_t batch = 128;
  double lr = 0.01;
  std::size_t eval_every = 500;
  std::size_t eval_repeats = 1;
  NoiseScope noise_scope = NoiseScope::PerStep;
  CageConfig cage;
  // output
  std::string out = "runs/run";
  bool export_circuit = true;
  std::size_t jobs = 1;

  [[nodiscard]] TrainConfig train_config() const {
    TrainConfig t;
    t.learning_rate = lr;
    t.batch_size = batch;
    t.iterations = iters;
    t.eval_every = eval_every;
    t.method = method.method;
    t.tau = tau;
    t.seed = seed;
    t.cage_enabled = method.cage;
    t.cage = cage;
    t.noise_scope = noise_scope;
    t.eval_repeats = eval_repeats;
    return t;
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](char c) { return c == ' ' || c == '\t'; }), item.end());
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      out.push_back(parse_number<T>(key, item));
    }
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

inline bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected on or off, got '" + v + "'");
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::string fmt_real(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace detail

/// Applies every entry of `m` to a default config and validates the result.
/// Unknown keys and bad values raise ConfigError naming the field.
[[nodiscard]] inline ExperimentConfig config_from_map(const ConfigMap& m) {
  using detail::parse_number;
  ExperimentConfig c;
  std::optional<bool> cage_switch;
  for (const auto& [k, v] : m) {
    if (k == "dataset") c.dataset = v;
    else if (k == "data-dir") c.data_dir = v;
    else if (k == "binarize") c.binarize = v;
    else if (k == "subset") c.subset = parse_number<std::size_t>(k, v);
    else if (k == "test-subset") c.test_subset = parse_number<std::size_t>(k, v);
    else if (k == "data-seed") c.data_seed = parse_number<std::uint64_t>(k, v);
    else if (k == "synthetic-dims") c.synthetic_dims = parse_number<std::size_t>(k, v);
    else if (k == "synthetic-samples") c.synthetic_samples = parse_number<std::size_t>(k, v);
    else if (k == "layers") c.layers = parse_number<std::size_t>(k, v);
    else if (k == "width") c.width = parse_number<std::size_t>(k, v);
    else if (k == "classes") c.classes = parse_number<std::size_t>(k, v);
    else if (k == "method") c.method = parse_method_label(v);
    else if (k == "methods") c.methods = detail::parse_list<std::string>(k, v);
    else if (k == "tau") c.tau = parse_number<double>(k, v);
    else if (k == "tau-grid") c.tau_grid = detail::parse_list<double>(k, v);
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "seeds") c.seeds = detail::parse_list<std::uint64_t>(k, v);
    else if (k == "iters") c.iters = parse_number<std::size_t>(k, v);
    else if (k == "batch") c.batch = parse_number<std::size_t>(k, v);
    else if (k == "lr") c.lr = parse_number<double>(k, v);
    else if (k == "eval-every") c.eval_every = parse_number<std::size_t>(k, v);
    else if (k == "eval-repeats") c.eval_repeats = parse_number<std::size_t>(k, v);
    else if (k == "noise-scope") {
      if (v == "per-step") c.noise_scope = NoiseScope::PerStep;
      else if (v == "per-example") c.noise_scope = NoiseScope::PerExample;
      else throw ConfigError("noise-scope: expected per-step or per-example, got '" + v + "'");
    }
    else if (k == "cage") cage_switch = detail::parse_switch(k, v);
    else if (k == "cage-tau-min") c.cage.tau_min = parse_number<double>(k, v);
    else if (k == "cage-tau-max") c.cage.tau_max = parse_number<double>(k, v);
    else if (k == "cage-beta") c.cage.beta = parse_number<double>(k, v);
    else if (k == "out") c.out = v;
    else if (k == "export-circuit") c.export_circuit = detail::parse_switch(k, v);
    else if (k == "jobs") c.jobs = parse_number<std::size_t>(k, v);
    else throw ConfigError("unknown configuration key '" + k + "'");
  }
  if (cage_switch) {
    if (*cage_switch && !c.method.method.is_hard()) {
      throw ConfigError("cage: only defined for hard-forward methods (hard-st, gumbel-st), not " +
                        std::string(c.method.method.name()));
    }
    c.method.cage = *cage_switch;
  }
  for (const auto& name : c.methods) (void)parse_method_label(name);
  static const std::vector<std::string> datasets{"mnist", "mnist-binary", "cifar10-binary", "parity",
                                                 "two-moons-binarized", "random-teacher-circuit"};
  if (std::find(datasets.begin(), datasets.end(), c.dataset) == datasets.end()) {
    throw ConfigError("dataset: unknown dataset '" + c.dataset +
                      "' (expected mnist, mnist-binary, cifar10-binary, parity, two-moons-binarized or "
                      "random-teacher-circuit)");
  }
  if (c.binarize != "auto" && c.binarize != "none" && c.binarize != "threshold" && c.binarize != "thermometer") {
    throw ConfigError("binarize: expected auto, none, threshold or thermometer, got '" + c.binarize + "'");
  }
  if (c.layers == 0) throw ConfigError("layers: must be >= 1");
  if (c.width < 2) throw ConfigError("width: must be >= 2");
  if (c.classes == 1) throw ConfigError("classes: must be >= 2");
  if (c.synthetic_dims < 2) throw ConfigError("synthetic-dims: must be >= 2");
  if (c.jobs == 0) throw ConfigError("jobs: must be >= 1");
  for (double t : c.tau_grid) {
    if (!(t > 0.0)) throw ConfigError("tau-grid: temperatures must be positive");
  }
  if (c.iters == 0) throw ConfigError("iters: must be >= 1");
  c.train_config().validate();
  return c;
}

/// Inverse of config_from_map; the text form is what a run directory stores.
[[nodiscard]] inline std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "# lgn run configuration\n"
     << "dataset = " << c.dataset << '\n';
  if (!c.data_dir.empty()) os << "data-dir = " << c.data_dir << '\n';
  os << "binarize = " << c.binarize << '\n'
     << "subset = " << c.subset << '\n'
     << "test-subset = " << c.test_subset << '\n'
     << "data-seed = " << c.data_seed << '\n'
     << "synthetic-dims = " << c.synthetic_dims << '\n'
     << "synthetic-samples = " << c.synthetic_samples << '\n'
     << "layers = " << c.layers << '\n'
     << "width = " << c.width << '\n'
     << "classes = " << c.classes << '\n'
     << "method = " << c.method.name() << '\n'
     << "tau = " << detail::fmt_real(c.tau) << '\n'
     << "seed = " << c.seed << '\n'
     << "iters = " << c.iters << '\n'
     << "batch = " << c.batch << '\n'
     << "lr = " << detail::fmt_real(c.lr) << '\n'
     << "eval-every = " << c.eval_every << '\n'
     << "eval-repeats = " << c.eval_repeats << '\n'
     << "noise-scope = " << (c.noise_scope == NoiseScope::PerStep ? "per-step" : "per-example") << '\n'
     << "export-circuit = " << (c.export_circuit ? "on" : "off") << '\n'
     << "\n[cage]\n"
     << "tau-min = " << detail::fmt_real(c.cage.tau_min) << '\n'
     << "tau-max = " << detail::fmt_real(c.cage.tau_max) << '\n'
     << "beta = " << detail::fmt_real(c.cage.beta) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Datasets

struct DataPair {
  Dataset train;
  Dataset test;
};

[[nodiscard]] inline fs::path resolve_data_dir(const ExperimentConfig& c) {
  if (!c.data_dir.empty()) return c.data_dir;
  if (const char* env = std::getenv("LGN_DATA_DIR"); env != nullptr && *env != '\0') return env;
  throw DataError("dataset '" + c.dataset + "' needs --data-dir or the LGN_DATA_DIR environment variable");
}

[[nodiscard]] inline DataPair load_data(const ExperimentConfig& c) {
  DataPair d;
  const bool synthetic = c.dataset == "parity" || c.dataset == "two-moons-binarized" ||
                         c.dataset == "random-teacher-circuit";
  if (synthetic) {
    const auto kind = parse_synthetic_kind(c.dataset);
    d.train = synthetic_task(kind, c.synthetic_dims, c.synthetic_samples, c.data_seed, 0);
    d.test = synthetic_task(kind, c.synthetic_dims, c.synthetic_samples, c.data_seed, 1);
  } else if (c.dataset == "mnist" || c.dataset == "mnist-binary") {
    const auto dir = resolve_data_dir(c);
    d.train = load_mnist(dir, Split::Train);
    d.test = load_mnist(dir, Split::Test);
  } else {
    const auto dir = resolve_data_dir(c);
    d.train = load_cifar10(dir, Split::Train);
    d.test = load_cifar10(dir, Split::Test);
  }
  d.train = shuffled_subset(d.train, c.subset, c.data_seed);
  if (c.test_subset != 0) d.test = shuffled_subset(d.test, c.test_subset, mix64(c.data_seed, 1));
  std::string mode = c.binarize;
  if (mode == "auto") {
    mode = c.dataset == "mnist-binary" ? "threshold" : c.dataset == "cifar10-binary" ? "thermometer" : "none";
  }
  if (mode == "threshold") {
    d.train = binarize_threshold(d.train);
    d.test = binarize_threshold(d.test);
  } else if (mode == "thermometer") {
    const std::size_t channels = c.dataset == "cifar10-binary" ? kCifarChannels : 1;
    d.train = binarize_thermometer(d.train, channels);
    d.test = binarize_thermometer(d.test, channels);
  }
  d.train.validate();
  d.test.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Single runs

inline constexpr const char* kCompleteMarker = "COMPLETE";

[[nodiscard]] inline nlohmann::json row_to_json(const MetricsRow& r) {
  return nlohmann::ordered_json{{"iteration", r.iteration},
                                {"train_accuracy", r.train_accuracy},
                                {"a_method", r.a_method},
                                {"a_soft", r.a_soft},
                                {"a_hard", r.a_hard},
                                {"selection_gap", r.selection_gap},
                                {"computation_gap", r.computation_gap},
                                {"total_gap", r.total_gap},
                                {"confidence", r.confidence},
                                {"tau_b", r.tau_b},
                                {"loss", r.loss}};
}

[[nodiscard]] inline MetricsRow row_from_json(const nlohmann::json& j) {
  MetricsRow r;
  r.iteration = j.at("iteration").get<std::size_t>();
  r.train_accuracy = j.at("train_accuracy").get<double>();
  r.a_method = j.at("a_method").get<double>();
  r.a_soft = j.at("a_soft").get<double>();
  r.a_hard = j.at("a_hard").get<double>();
  r.selection_gap = j.at("selection_gap").get<double>();
  r.computation_gap = j.at("computation_gap").get<double>();
  r.total_gap = j.at("total_gap").get<double>();
  r.confidence = j.at("confidence").get<double>();
  r.tau_b = j.at("tau_b").get<double>();
  r.loss = j.at("loss").get<double>();
  return r;
}

inline void write_metrics_jsonl(std::ostream& os, const MetricsLog& log) {
  for (const auto& r : log) os << nlohmann::ordered_json(row_to_json(r)).dump() << '\n';
}

[[nodiscard]] inline MetricsLog read_metrics_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  MetricsLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      log.push_back(row_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

inline void write_metrics_csv(std::ostream& os, const MetricsLog& log) {
  os << "iteration,train_accuracy,a_method,a_soft,a_hard,selection_gap,computation_gap,total_gap,confidence,tau_b,loss\n";
  os << std::setprecision(17);
  for (const auto& r : log) {
    os << r.iteration << ',' << r.train_accuracy << ',' << r.a_method << ',' << r.a_soft << ',' << r.a_hard << ','
       << r.selection_gap << ',' << r.computation_gap << ',' << r.total_gap << ',' << r.confidence << ',' << r.tau_b
       << ',' << r.loss << '\n';
  }
}

struct RunOutcome {
  fs::path dir;
  MetricsLog log;
  std::vector<double> tau_trace;
  double seconds = 0.0;
};

/// Trains one configuration and writes its run directory:
///   config.txt, metrics.jsonl, summary.csv, tau_trace.csv, checkpoint.txt,
///   circuit.txt (optional), result.json and finally the COMPLETE marker.
inline RunOutcome run_experiment(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* progress = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = load_data(cfg);
  const std::size_t classes = cfg.classes == 0 ? data.train.classes : cfg.classes;
  if (classes < data.train.classes) {
    throw ConfigError("classes: " + std::to_string(classes) + " is below the dataset's " +
                      std::to_string(data.train.classes));
  }
  if (cfg.width % classes != 0) {
    throw ConfigError("width: " + std::to_string(cfg.width) + " is not divisible by the class count " +
                      std::to_string(classes));
  }
  auto net = build_network({data.train.dims, cfg.layers, cfg.width, classes}, cfg.seed);
  fs::create_directories(dir);
  fs::remove(dir / kCompleteMarker);
  {
    std::ofstream os(dir / "config.txt");
    os << config_to_text(cfg);
  }
  std::ofstream jsonl(dir / "metrics.jsonl");
  const auto result = train(cfg.train_config(), data.train, data.test, net, [&](const MetricsRow& r) {
    write_metrics_jsonl(jsonl, {r});
    jsonl.flush();
    if (progress) {
      *progress << "[" << cfg.method.name() << " tau=" << cfg.tau << " seed=" << cfg.seed << "] iter " << r.iteration
                << "  train " << std::fixed << std::setprecision(4) << r.train_accuracy << "  test " << r.a_method
                << "  sel " << std::showpos << r.selection_gap << std::noshowpos << "  tau_b " << r.tau_b
                << std::defaultfloat << '\n';
    }
  });
  jsonl.close();
  {
    std::ofstream os(dir / "summary.csv");
    write_metrics_csv(os, result.log);
  }
  {
    std::ofstream os(dir / "tau_trace.csv");
    os << "step,tau_b\n" << std::setprecision(17);
    for (std::size_t t = 0; t < result.tau_trace.size(); ++t) os << t << ',' << result.tau_trace[t] << '\n';
  }
  save_checkpoint((dir / "checkpoint.txt").string(), net);
  if (cfg.export_circuit) save_circuit((dir / "circuit.txt").string(), extract_circuit(net));
  RunOutcome out;
  out.dir = dir;
  out.log = result.log;
  out.tau_trace = result.tau_trace;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  {
    nlohmann::ordered_json j;
    j["method"] = cfg.method.name();
    j["tau"] = cfg.tau;
    j["seed"] = cfg.seed;
    if (!result.log.empty()) {
      j["final"] = row_to_json(result.log.back());
      j["peak_selection_gap"] = peak_gap(result.log);
      j["peak_selection_gap_last80"] = peak_gap_late(result.log);
    }
    const auto usage = gate_usage(net);
    j["gate_usage"] = usage.total;
    j["commitment_by_layer"] = commitment_by_layer(net).per_layer;
    j["seconds"] = out.seconds;
    std::ofstream os(dir / "result.json");
    os << j.dump(2) << '\n';
  }
  std::ofstream(dir / kCompleteMarker) << "ok\n";
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  std::string method;
  double tau = 1.0;
  std::uint64_t seed = 0;
  std::string dir;  // relative to the manifest
  std::string status = "pending";  // pending | complete | failed
  std::string error;
};

[[nodiscard]] inline std::string cell_dir_name(const std::string& method, double tau, std::uint64_t seed) {
  std::ostringstream os;
  os << method << "_tau" << tau << "_seed" << seed;
  return os.str();
}

inline void write_manifest(const fs::path& path, const std::vector<SweepCell>& cells) {
  nlohmann::ordered_json j;
  j["format"] = "lgn-sweep-manifest 1";
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    nlohmann::ordered_json e{{"method", c.method}, {"tau", c.tau}, {"seed", c.seed}, {"dir", c.dir},
                             {"status", c.status}};
    if (!c.error.empty()) e["error"] = c.error;
    j["cells"].push_back(e);
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    os << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

[[nodiscard]] inline std::vector<SweepCell> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<SweepCell> cells;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("cells")) {
      SweepCell c;
      c.method = e.at("method").get<std::string>();
      c.tau = e.at("tau").get<double>();
      c.seed = e.at("seed").get<std::uint64_t>();
      c.dir = e.at("dir").get<std::string>();
      c.status = e.at("status").get<std::string>();
      if (e.contains("error")) c.error = e.at("error").get<std::string>();
      cells.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  }
  return cells;
}

/// Cartesian product methods x tau-grid x seeds under cfg.out. Cells whose
/// directory already holds the COMPLETE marker are skipped, failures are
/// recorded in the manifest and the sweep carries on. Returns the manifest.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
  const fs::path root = cfg.out;
  fs::create_directories(root);
  std::vector<SweepCell> cells;
  for (const auto& m : cfg.methods) {
    for (double tau : cfg.tau_grid) {
      for (auto seed : cfg.seeds) {
        SweepCell c;
        c.method = m;
        c.tau = tau;
        c.seed = seed;
        c.dir = cell_dir_name(m, tau, seed);
        if (fs::exists(root / c.dir / kCompleteMarker)) c.status = "complete";
        cells.push_back(c);
      }
    }
  }
  const auto manifest = root / "manifest.json";
  write_manifest(manifest, cells);
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= cells.size()) return;
      SweepCell cell;
      {
        std::lock_guard lock(mu);
        cell = cells[i];
      }
      if (cell.status == "complete") continue;
      ExperimentConfig rc = cfg;
      rc.method = parse_method_label(cell.method);
      rc.tau = cell.tau;
      rc.seed = cell.seed;
      std::string status = "complete";
      std::string error;
      try {
        (void)run_experiment(rc, root / cell.dir, cfg.jobs == 1 ? progress : nullptr);
      } catch (const std::exception& e) {
        status = "failed";
        error = e.what();
      }
      std::lock_guard lock(mu);
      cells[i].status = status;
      cells[i].error = error;
      write_manifest(manifest, cells);
      if (progress) *progress << cell.dir << ": " << status << (error.empty() ? "" : " (" + error + ")") << '\n';
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < std::min(cfg.jobs, cells.size()); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return cells;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportCell {
  std::string method;
  double tau = 0.0;
  std::size_t runs = 0;
  double final_gap = 0.0;       // mean over seeds
  double peak_gap = 0.0;        // signed largest magnitude over seeds
  double final_accuracy = 0.0;  // mean A_method over seeds
  double final_hard_accuracy = 0.0;
  bool training_failure = false;
};

struct MethodSummary {
  std::string method;
  double worst_accuracy = 0.0;
  double accuracy_range = 0.0;
};

struct Report {
  std::vector<ReportCell> cells;
  std::vector<MethodSummary> methods;
};

/// Cells whose selection gap ever fell below this are flagged as training
/// failures: the deployed circuit beat the training forward.
inline constexpr double kFailureGap = -0.01;

/// Aggregates completed runs. The input order does not matter.
[[nodiscard]] inline Report build_report(const std::vector<SweepCell>& manifest, const fs::path& root) {
  struct Key {
    std::size_t method_rank;
    std::string method;
    double tau;
    bool operator<(const Key& o) const {
      return std::tie(method_rank, method, tau) < std::tie(o.method_rank, o.method, o.tau);
    }
  };
  std::map<Key, std::map<std::uint64_t, MetricsLog>> grouped;
  const auto& names = method_names();
  for (const auto& c : manifest) {
    if (c.status != "complete") continue;
    const auto it = std::find(names.begin(), names.end(), c.method);
    const Key key{static_cast<std::size_t>(it - names.begin()), c.method, c.tau};
    auto log = read_metrics_jsonl(root / c.dir / "metrics.jsonl");
    if (!log.empty()) grouped[key][c.seed] = std::move(log);
  }
  if (grouped.empty()) throw DataError("report: no completed runs in the manifest");
  Report rep;
  std::map<std::size_t, MethodSummary> per_method;
  std::map<std::size_t, std::vector<double>> accs;
  for (const auto& [key, runs] : grouped) {
    ReportCell cell;
    cell.method = key.method;
    cell.tau = key.tau;
    cell.runs = runs.size();
    bool first = true;
    for (const auto& [seed, log] : runs) {
      cell.final_gap += log.back().selection_gap;
      cell.final_accuracy += log.back().a_method;
      cell.final_hard_accuracy += log.back().a_hard;
      const double p = peak_gap(log);
      if (first || std::abs(p) > std::abs(cell.peak_gap)) cell.peak_gap = p;
      first = false;
    }
    const double n = static_cast<double>(runs.size());
    cell.final_gap /= n;
    cell.final_accuracy /= n;
    cell.final_hard_accuracy /= n;
    cell.training_failure = cell.peak_gap <= kFailureGap || cell.final_gap <= kFailureGap;
    rep.cells.push_back(cell);
    accs[key.method_rank].push_back(cell.final_accuracy);
    per_method[key.method_rank].method = key.method;
  }
  for (auto& [rank, summary] : per_method) {
    const auto& a = accs[rank];
    const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
    summary.worst_accuracy = *lo;
    summary.accuracy_range = *hi - *lo;
    rep.methods.push_back(summary);
  }
  return rep;
}

/// Human-readable tables: gaps as "final / peak" in percent per (method, tau),
/// then worst accuracy and range across tau per method.
inline void print_report(std::ostream& os, const Report& rep) {
  std::vector<double> taus;
  for (const auto& c : rep.cells) {
    if (std::find(taus.begin(), taus.end(), c.tau) == taus.end()) taus.push_back(c.tau);
  }
  std::sort(taus.begin(), taus.end());
  os << "Selection gap, final / peak (%)   [! = training failure]\n";
  os << std::left << std::setw(16) << "method";
  for (double t : taus) os << std::setw(20) << ("tau=" + detail::fmt_real(t));
  os << '\n';
  std::vector<std::string> order;
  for (const auto& c : rep.cells) {
    if (std::find(order.begin(), order.end(), c.method) == order.end()) order.push_back(c.method);
  }
  for (const auto& m : order) {
    os << std::setw(16) << m;
    for (double t : taus) {
      const auto it = std::find_if(rep.cells.begin(), rep.cells.end(),
                                   [&](const ReportCell& c) { return c.method == m && c.tau == t; });
      std::ostringstream cell;
      if (it == rep.cells.end()) {
        cell << "-";
      } else {
        cell << std::showpos << std::fixed << std::setprecision(1) << 100.0 * it->final_gap << " / "
             << 100.0 * it->peak_gap << (it->training_failure ? " !" : "");
      }
      os << std::setw(20) << cell.str();
    }
    os << '\n';
  }
  os << "\nTest accuracy across tau: worst / range (%)\n";
  for (const auto& s : rep.methods) {
    os << std::setw(16) << s.method << std::fixed << std::setprecision(1) << 100.0 * s.worst_accuracy << " / "
       << 100.0 * s.accuracy_range << std::defaultfloat << '\n';
  }
  os << std::right;
}

inline void write_report_csv(const fs::path& dir, const Report& rep) {
  {
    std::ofstream os(dir / "report_cells.csv");
    os << "method,tau,runs,final_gap,peak_gap,final_accuracy,final_hard_accuracy,training_failure\n"
       << std::setprecision(17);
    for (const auto& c : rep.cells) {
      os << c.method << ',' << c.tau << ',' << c.runs << ',' << c.final_gap << ',' << c.peak_gap << ','
         << c.final_accuracy << ',' << c.final_hard_accuracy << ',' << (c.training_failure ? 1 : 0) << '\n';
    }
  }
  std::ofstream os(dir / "report_methods.csv");
  os << "method,worst_accuracy,accuracy_range\n" << std::setprecision(17);
  for (const auto& s : rep.methods) os << s.method << ',' << s.worst_accuracy << ',' << s.accuracy_range << '\n';
}

/// Accepts a sweep directory, its manifest.json, or a single run directory.
[[nodiscard]] inline std::pair<std::vector<SweepCell>, fs::path> load_report_input(const fs::path& p) {
  if (fs::is_regular_file(p)) return {read_manifest(p), p.parent_path()};
  if (fs::exists(p / "manifest.json")) return {read_manifest(p / "manifest.json"), p};
  if (fs::exists(p / "metrics.jsonl")) {
    const auto cfg = config_from_map(load_config_file(p / "config.txt"));
    SweepCell c;
    c.method = cfg.method.name();
    c.tau = cfg.tau;
    c.seed = cfg.seed;
    c.dir = p.filename().string();
    c.status = fs::exists(p / kCompleteMarker) ? "complete" : "pending";
    return {{c}, p.parent_path()};
  }
  throw DataError(p.string() + ": neither a manifest nor a run directory");
}

}  // namespace lgn

// lgn: train, sweep, report on and deploy differentiable logic gate networks.

#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "lgn/circuit.hpp"
#include "lgn/data.hpp"
#include "lgn/errors.hpp"
#include "lgn/experiment.hpp"
#include "lgn/network.hpp"

namespace {

struct FlagSpec {
  const char* name;
  const char* help;
};

const std::vector<FlagSpec> kRunFlags{
    {"dataset", "mnist, mnist-binary, cifar10-binary, parity, two-moons-binarized, random-teacher-circuit"},
    {"data-dir", "directory holding the dataset files (falls back to $LGN_DATA_DIR)"},
    {"binarize", "auto, none, threshold or thermometer"},
    {"subset", "training samples drawn from the train split (0 = all)"},
    {"test-subset", "test samples used for evaluation (0 = all)"},
    {"data-seed", "seed for subset selection and synthetic data"},
    {"synthetic-dims", "input width of synthetic tasks"},
    {"synthetic-samples", "samples per split of synthetic tasks (parity: 0 = all inputs)"},
    {"layers", "number of gate layers"},
    {"width", "nodes per layer"},
    {"classes", "output classes (0 = from the dataset)"},
    {"method", "soft-mix, soft-gumbel, hard-st, gumbel-st, hard-st-cage, gumbel-st-cage"},
    {"tau", "temperature (backward temperature for hard methods)"},
    {"seed", "network and noise seed"},
    {"iters", "training iterations"},
    {"batch", "batch size"},
    {"lr", "Adam learning rate"},
    {"eval-every", "iterations between test evaluations"},
    {"eval-repeats", "noisy evaluation passes averaged for stochastic methods"},
    {"noise-scope", "per-step or per-example Gumbel noise"},
    {"cage", "on/off: adaptive backward temperature (hard methods only)"},
    {"cage-tau-min", "CAGE lower temperature bound"},
    {"cage-tau-max", "CAGE upper temperature bound"},
    {"cage-beta", "CAGE confidence EMA factor"},
    {"export-circuit", "on/off: write circuit.txt next to the checkpoint"},
    {"out", "output directory"},
};

const std::vector<FlagSpec> kSweepFlags{
    {"methods", "comma-separated method list"},
    {"tau-grid", "comma-separated temperatures"},
    {"seeds", "comma-separated seeds"},
    {"jobs", "runs trained concurrently"},
};

struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app, const std::vector<FlagSpec>& specs) {
    for (const auto& f : specs) app->add_option(std::string("--") + f.name, values[f.name], f.help);
  }

  void attach_config(CLI::App* app) {
    app->add_option("--config", config_file, "key = value file; flags override its entries");
  }

  [[nodiscard]] lgn::ExperimentConfig resolve(const CLI::App* app) const {
    lgn::ConfigMap m;
    if (!config_file.empty()) m = lgn::load_config_file(config_file);
    for (const auto& [k, v] : values) {
      if (app->count("--" + k) > 0) m[k] = v;
    }
    return lgn::config_from_map(m);
  }
};

int run_command(const ConfigFlags& flags, const CLI::App* app) {
  const auto cfg = flags.resolve(app);
  const auto out = lgn::run_experiment(cfg, cfg.out, &std::cout);
  const auto& last = out.log.back();
  std::cout << "wrote " << out.dir.string() << "  (test accuracy " << std::fixed << std::setprecision(4)
            << last.a_method << ", selection gap " << last.selection_gap << ", " << std::setprecision(1)
            << out.seconds << " s)\n";
  return 0;
}

int sweep_command(const ConfigFlags& flags, const CLI::App* app) {
  const auto cfg = flags.resolve(app);
  const auto cells = lgn::run_sweep(cfg, &std::cout);
  std::size_t done = 0, failed = 0;
  for (const auto& c : cells) {
    done += c.status == "complete" ? 1 : 0;
    failed += c.status == "failed" ? 1 : 0;
  }
  std::cout << done << " complete, " << failed << " failed, manifest " << (std::filesystem::path(cfg.out) / "manifest.json").string()
            << '\n';
  return failed == 0 ? 0 : 2;
}

int report_command(const std::string& input, const std::string& csv_dir) {
  const auto [cells, root] = lgn::load_report_input(input);
  const auto rep = lgn::build_report(cells, root);
  lgn::print_report(std::cout, rep);
  if (!csv_dir.empty()) {
    std::filesystem::create_directories(csv_dir);
    lgn::write_report_csv(csv_dir, rep);
  }
  return 0;
}

int verify_command(const std::string& circuit_path, const std::string& checkpoint_path, std::size_t samples,
                   std::uint64_t seed, bool exhaustive) {
  const auto circuit = lgn::load_circuit(circuit_path);
  const auto net = lgn::load_checkpoint(checkpoint_path);
  if (circuit.input_width != net.input_width) {
    throw lgn::DataError("circuit has " + std::to_string(circuit.input_width) + " inputs, checkpoint has " +
                         std::to_string(net.input_width));
  }
  lgn::EquivalenceReport rep;
  if (exhaustive) {
    if (circuit.input_width > 24) throw lgn::ConfigError("exhaustive: input width above 24");
    const auto rows = lgn::exhaustive_binary_rows(circuit.input_width);
    rep = lgn::verify_equivalence(circuit, net, lgn::RowMatrix{rows, circuit.input_width});
  } else {
    rep = lgn::verify_equivalence(circuit, net, samples, seed);
  }
  std::cout << rep.describe() << '\n';
  return rep.passed ? 0 : 3;
}

int pixel_command(const std::string& dir, const std::string& split_name) {
  const auto split = split_name == "test" ? lgn::Split::Test : lgn::Split::Train;
  const auto ds = lgn::load_mnist(dir, split);
  const auto raw = lgn::pixel_distribution_report(ds.features);
  const auto bin = lgn::pixel_distribution_report(lgn::binarize_threshold(ds).features);
  std::cout << std::fixed << std::setprecision(1) << "MNIST " << split_name << " (" << raw.values << " pixel values)\n"
            << "  exactly zero        " << 100.0 * raw.exactly_zero << "%\n"
            << "  low (0, 0.1)        " << 100.0 * raw.low << "%\n"
            << "  middle [0.1, 0.9]   " << 100.0 * raw.middle << "%\n"
            << "  high (0.9, 1]       " << 100.0 * raw.high << "%\n"
            << "  binary-like         " << 100.0 * raw.binary_like << "%\n"
            << "  zero after x > 0.5  " << 100.0 * bin.exactly_zero << "%\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable logic gate network trainer and analyzer"};
  app.require_subcommand(1);

  ConfigFlags run_flags;
  auto* run = app.add_subcommand("run", "train one configuration into a run directory");
  run_flags.attach_config(run);
  run_flags.attach(run, kRunFlags);

  ConfigFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "train the method x tau x seed grid with a manifest");
  sweep_flags.attach_config(sweep);
  sweep_flags.attach(sweep, kRunFlags);
  sweep_flags.attach(sweep, kSweepFlags);

  std::string report_input, report_csv;
  auto* report = app.add_subcommand("report", "aggregate a sweep (or a single run) into gap and accuracy tables");
  report->add_option("input", report_input, "sweep directory, manifest.json or run directory")->required();
  report->add_option("--csv", report_csv, "also write report_cells.csv and report_methods.csv here");

  std::string ckpt, circuit_out;
  auto* exportc = app.add_subcommand("export-circuit", "extract the argmax circuit from a checkpoint");
  exportc->add_option("--checkpoint", ckpt, "checkpoint.txt of a run")->required();
  exportc->add_option("--out", circuit_out, "circuit file to write")->required();

  std::string vcircuit, vckpt;
  std::size_t vsamples = 10000;
  std::uint64_t vseed = 0;
  bool vexhaustive = false;
  auto* verify = app.add_subcommand("verify-circuit", "check bit-packed circuit against the float hard pipeline");
  verify->add_option("--circuit", vcircuit, "circuit file")->required();
  verify->add_option("--checkpoint", vckpt, "checkpoint the circuit came from")->required();
  verify->add_option("--samples", vsamples, "random binary inputs to test");
  verify->add_option("--seed", vseed, "seed for the random inputs");
  verify->add_flag("--exhaustive", vexhaustive, "test every input (width <= 24)");

  std::string pdir, psplit = "train";
  auto* pixel = app.add_subcommand("pixel-report", "pixel value distribution of MNIST");
  pixel->add_option("--data-dir", pdir, "MNIST directory (falls back to $LGN_DATA_DIR)");
  pixel->add_option("--split", psplit, "train or test")->check(CLI::IsMember({"train", "test"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return run_command(run_flags, run);
    if (*sweep) return sweep_command(sweep_flags, sweep);
    if (*report) return report_command(report_input, report_csv);
    if (*exportc) {
      lgn::save_circuit(circuit_out, lgn::extract_circuit(lgn::load_checkpoint(ckpt)));
      std::cout << "wrote " << circuit_out << '\n';
      return 0;
    }
    if (*verify) return verify_command(vcircuit, vckpt, vsamples, vseed, vexhaustive);
    if (*pixel) {
      if (pdir.empty()) {
        const char* env = std::getenv("LGN_DATA_DIR");
        if (env == nullptr) throw lgn::DataError("pixel-report needs --data-dir or LGN_DATA_DIR");
        pdir = env;
      }
      return pixel_command(pdir, psplit);
    }
  } catch (const lgn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

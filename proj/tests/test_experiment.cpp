#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "lgn/experiment.hpp"

using namespace lgn;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("lgn_exp_") + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  [[nodiscard]] const fs::path& path() const { return path_; }

private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ConfigMap tiny_run() {
  return {{"dataset", "random-teacher-circuit"},
          {"synthetic-dims", "10"},
          {"synthetic-samples", "256"},
          {"layers", "2"},
          {"width", "32"},
          {"iters", "60"},
          {"batch", "16"},
          {"eval-every", "20"}};
}

std::string config_error(const ConfigMap& m) {
  try {
    (void)config_from_map(m);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ConfigText, SectionsPrefixKeys) {
  std::istringstream in("# comment\nmethod = gumbel-st\n\n[cage]\ntau-min = 0.25\nbeta=0.9\n");
  const auto m = parse_config_text(in);
  EXPECT_EQ(m.at("method"), "gumbel-st");
  EXPECT_EQ(m.at("cage-tau-min"), "0.25");
  EXPECT_EQ(m.at("cage-beta"), "0.9");
  std::istringstream bad("method gumbel-st\n");
  EXPECT_THROW((void)parse_config_text(bad), ConfigError);
}

TEST(ConfigMapping, DefaultsAreDeskScale) {
  const auto c = config_from_map({});
  EXPECT_EQ(c.layers, 3u);
  EXPECT_EQ(c.width, 8000u);
  EXPECT_EQ(c.subset, 10000u);
  EXPECT_EQ(c.iters, 10000u);
  EXPECT_EQ(c.tau_grid, (std::vector<double>{0.05, 0.1, 0.5, 1.0, 2.0}));
  EXPECT_EQ(c.seeds.size(), 3u);
}

TEST(ConfigMapping, ErrorsNameTheField) {
  EXPECT_NE(config_error({{"tau", "abc"}}).find("tau"), std::string::npos);
  EXPECT_NE(config_error({{"width", "12x"}}).find("width"), std::string::npos);
  EXPECT_NE(config_error({{"colour", "red"}}).find("colour"), std::string::npos);
  EXPECT_NE(config_error({{"method", "soft-mix"}, {"cage", "on"}}).find("cage"), std::string::npos);
  EXPECT_NE(config_error({{"lr", "-1"}}).find("lr"), std::string::npos);
  EXPECT_NE(config_error({{"tau-grid", "0.1,-2"}}).find("tau-grid"), std::string::npos);
  const auto msg = config_error({{"method", "hardst"}});
  for (const char* name : {"soft-mix", "soft-gumbel", "hard-st", "gumbel-st", "gumbel-st-cage"}) {
    EXPECT_NE(msg.find(name), std::string::npos) << name;
  }
}

TEST(ConfigMapping, CageSwitchAndVariantNames) {
  auto c = config_from_map({{"method", "gumbel-st"}, {"cage", "on"}});
  EXPECT_TRUE(c.method.cage);
  EXPECT_EQ(c.method.name(), "gumbel-st-cage");
  c = config_from_map({{"method", "hard-st-cage"}});
  EXPECT_TRUE(c.train_config().cage_enabled);
  c = config_from_map({{"method", "hard-st-cage"}, {"cage", "off"}});
  EXPECT_FALSE(c.method.cage);
  EXPECT_THROW((void)parse_method_label("soft-mix-cage"), ConfigError);
}

TEST(ConfigMapping, TextSnapshotRoundTrips) {
  auto m = tiny_run();
  m["method"] = "gumbel-st-cage";
  m["cage-tau-max"] = "2.25";
  m["tau"] = "0.1";
  const auto c = config_from_map(m);
  std::istringstream in(config_to_text(c));
  const auto back = config_from_map(parse_config_text(in));
  EXPECT_EQ(config_to_text(back), config_to_text(c));
  EXPECT_EQ(back.cage.tau_max, 2.25);
  EXPECT_EQ(back.tau, 0.1);
}

TEST(RunExperiment, WritesArtifactsAndIsReproducible) {
  TempDir tmp;
  const auto cfg = config_from_map(tiny_run());
  const auto a = run_experiment(cfg, tmp.path() / "a");
  const auto b = run_experiment(cfg, tmp.path() / "b");
  for (const char* f : {"config.txt", "metrics.jsonl", "summary.csv", "checkpoint.txt", "circuit.txt", "tau_trace.csv",
                        "result.json", kCompleteMarker}) {
    EXPECT_TRUE(fs::exists(tmp.path() / "a" / f)) << f;
  }
  EXPECT_EQ(slurp(tmp.path() / "a" / "metrics.jsonl"), slurp(tmp.path() / "b" / "metrics.jsonl"));
  EXPECT_EQ(slurp(tmp.path() / "a" / "checkpoint.txt"), slurp(tmp.path() / "b" / "checkpoint.txt"));
  const auto log = read_metrics_jsonl(tmp.path() / "a" / "metrics.jsonl");
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[2].a_method, a.log[2].a_method);
  EXPECT_EQ(log[0].selection_gap, 0.0);
  // the checkpoint reloads into the same circuit
  const auto net = load_checkpoint((tmp.path() / "a" / "checkpoint.txt").string());
  EXPECT_EQ(extract_circuit(net), load_circuit((tmp.path() / "a" / "circuit.txt").string()));
}

TEST(RunExperiment, MissingDatasetIsADataError) {
  TempDir tmp;
  auto m = tiny_run();
  m["dataset"] = "mnist-binary";
  m["data-dir"] = (tmp.path() / "nowhere").string();
  EXPECT_THROW((void)run_experiment(config_from_map(m), tmp.path() / "run"), DataError);
}

TEST(Sweep, GridResumeAndPartialFailure) {
  TempDir tmp;
  auto m = tiny_run();
  m["methods"] = "hard-st,gumbel-st";
  m["tau-grid"] = "0.5,1";
  m["seeds"] = "0";
  m["out"] = tmp.path().string();
  m["jobs"] = "2";
  const auto cfg = config_from_map(m);
  // Block one cell's directory with a regular file so that cell fails.
  std::ofstream(tmp.path() / cell_dir_name("gumbel-st", 1.0, 0)) << "in the way";
  auto cells = run_sweep(cfg);
  ASSERT_EQ(cells.size(), 4u);
  std::size_t complete = 0, failed = 0;
  for (const auto& c : cells) {
    complete += c.status == "complete";
    failed += c.status == "failed";
  }
  EXPECT_EQ(complete, 3u);
  EXPECT_EQ(failed, 1u);
  const auto manifest = read_manifest(tmp.path() / "manifest.json");
  EXPECT_EQ(manifest.size(), 4u);

  fs::remove(tmp.path() / cell_dir_name("gumbel-st", 1.0, 0));
  const auto before = fs::last_write_time(tmp.path() / cell_dir_name("hard-st", 0.5, 0) / "metrics.jsonl");
  cells = run_sweep(cfg);
  for (const auto& c : cells) EXPECT_EQ(c.status, "complete") << c.dir;
  EXPECT_EQ(fs::last_write_time(tmp.path() / cell_dir_name("hard-st", 0.5, 0) / "metrics.jsonl"), before);
}

TEST(Sweep, FullGridHasNinetyCells) {
  TempDir tmp;
  ExperimentConfig cfg = config_from_map({{"out", tmp.path().string()}});
  cfg.methods = method_names();
  // Mark every cell complete so nothing trains; only the manifest is built.
  for (const auto& mth : cfg.methods) {
    for (double t : cfg.tau_grid) {
      for (auto s : cfg.seeds) {
        fs::create_directories(tmp.path() / cell_dir_name(mth, t, s));
        std::ofstream(tmp.path() / cell_dir_name(mth, t, s) / kCompleteMarker) << "ok\n";
      }
    }
  }
  EXPECT_EQ(run_sweep(cfg).size(), 90u);
}

TEST(Report, AggregatesOrderIndependently) {
  TempDir tmp;
  auto m = tiny_run();
  m["methods"] = "hard-st,soft-mix";
  m["tau-grid"] = "0.5,1";
  m["seeds"] = "0,1";
  m["out"] = tmp.path().string();
  auto cells = run_sweep(config_from_map(m));
  const auto rep = build_report(cells, tmp.path());
  ASSERT_EQ(rep.cells.size(), 4u);
  ASSERT_EQ(rep.methods.size(), 2u);
  EXPECT_EQ(rep.methods[0].method, "soft-mix");  // canonical method order
  for (const auto& c : rep.cells) {
    EXPECT_EQ(c.runs, 2u);
    if (c.method == "hard-st") {
      EXPECT_EQ(c.final_gap, 0.0);
      EXPECT_EQ(c.peak_gap, 0.0);
    }
  }
  std::mt19937 mt(3);
  std::shuffle(cells.begin(), cells.end(), mt);
  const auto again = build_report(cells, tmp.path());
  std::ostringstream a, b;
  print_report(a, rep);
  print_report(b, again);
  EXPECT_EQ(a.str(), b.str());
  write_report_csv(tmp.path(), rep);
  EXPECT_TRUE(fs::exists(tmp.path() / "report_cells.csv"));
}

TEST(Report, SingleRunIsOneCell) {
  TempDir tmp;
  (void)run_experiment(config_from_map(tiny_run()), tmp.path() / "solo");
  const auto [cells, root] = load_report_input(tmp.path() / "solo");
  const auto rep = build_report(cells, root);
  ASSERT_EQ(rep.cells.size(), 1u);
  EXPECT_EQ(rep.methods[0].accuracy_range, 0.0);
}

TEST(Report, EmptyManifestIsAnError) {
  TempDir tmp;
  write_manifest(tmp.path() / "manifest.json", {});
  const auto [cells, root] = load_report_input(tmp.path());
  EXPECT_THROW((void)build_report(cells, root), DataError);
}

TEST(Report, NegativePeakFlagsTrainingFailure) {
  TempDir tmp;
  fs::create_directories(tmp.path() / "cell");
  MetricsLog log(3);
  log[0].selection_gap = 0.01;
  log[1].selection_gap = -0.30;
  log[2].selection_gap = -0.20;
  {
    std::ofstream os(tmp.path() / "cell" / "metrics.jsonl");
    write_metrics_jsonl(os, log);
  }
  SweepCell c{"gumbel-st", 0.05, 0, "cell", "complete", ""};
  const auto rep = build_report({c}, tmp.path());
  EXPECT_TRUE(rep.cells[0].training_failure);
  EXPECT_EQ(rep.cells[0].peak_gap, -0.30);
  std::ostringstream os;
  print_report(os, rep);
  EXPECT_NE(os.str().find("!"), std::string::npos);
}

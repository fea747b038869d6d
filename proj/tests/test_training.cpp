#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "lgn/data.hpp"
#include "lgn/training.hpp"

using namespace lgn;

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  const std::vector<double> y{0.3, -1.2, 2.0, 0.1};
  const auto lg = cross_entropy_loss_and_grad(y, 2);
  const double h = 1e-6;
  for (std::size_t c = 0; c < y.size(); ++c) {
    auto up = y, down = y;
    up[c] += h;
    down[c] -= h;
    const double fd =
        (cross_entropy_loss_and_grad(up, 2).loss - cross_entropy_loss_and_grad(down, 2).loss) / (2 * h);
    EXPECT_NEAR(lg.grad[c], fd, 1e-8);
  }
  double lse = 0.0;
  for (double v : y) lse += std::exp(v);
  EXPECT_NEAR(lg.loss, std::log(lse) - 2.0, 1e-14);
  EXPECT_THROW((void)cross_entropy_loss_and_grad(y, 4), std::invalid_argument);
}

TEST(CrossEntropy, BatchAveragesAndCountsCorrect) {
  const std::vector<double> logits{2.0, 0.0, 0.0, 1.0, 5.0, 5.0};
  const std::vector<std::int32_t> labels{0, 0, 1};
  const auto bl = batch_cross_entropy(logits, labels, 2);
  EXPECT_EQ(bl.correct, 1u);  // the tie in the last row picks class 0
  const double expect = (cross_entropy_loss_and_grad(std::vector<double>{2.0, 0.0}, 0).loss +
                         cross_entropy_loss_and_grad(std::vector<double>{0.0, 1.0}, 0).loss + std::log(2.0)) /
                        3.0;
  EXPECT_NEAR(bl.loss, expect, 1e-14);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 0.0};
  AdamState st;
  adam_step(p, g, st, 0.01);
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-9);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0}, st, 0.01), std::invalid_argument);
}

TEST(Cage, StartsAtMaximumWithUniformConfidence) {
  const auto st = CageState::start({});
  EXPECT_EQ(st.c_ema, 1.0 / 16.0);
  EXPECT_EQ(st.tau_b, 3.0);
  EXPECT_EQ(cage_temperature({}, 16, 1.0 / 16.0), 3.0);
  EXPECT_EQ(cage_temperature({}, 16, 1.0), 0.5);
}

TEST(Cage, TemperatureIsConfinedAndMonotone) {
  CageConfig cfg;
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 100; ++i) {
    const double c = i / 100.0;
    const double t = cage_temperature(cfg, 16, c);
    EXPECT_GE(t, cfg.tau_min);
    EXPECT_LE(t, cfg.tau_max);
    EXPECT_LE(t, prev);
    prev = t;
  }
}

TEST(Cage, EmaTracksConfidence) {
  auto st = CageState::start({});
  for (int i = 0; i < 2000; ++i) cage_update(st, 1.0);
  EXPECT_NEAR(st.c_ema, 1.0, 1e-8);
  EXPECT_NEAR(st.tau_b, 0.5, 1e-7);
  EXPECT_THROW(cage_update(st, 1.5), std::invalid_argument);
  EXPECT_THROW((void)CageState::start({2.0, 1.0, 0.9}), std::invalid_argument);
  EXPECT_THROW((void)CageState::start({0.5, 3.0, 1.0}), std::invalid_argument);
}

TEST(Cage, ConfidenceOfUniformLogitsIsOneOverK) {
  auto net = build_network({4, 2, 8, 2}, 0);
  for (auto& l : net.layers) std::fill(l.logits.begin(), l.logits.end(), 0.0);
  EXPECT_NEAR(cage_confidence(net), 1.0 / 16.0, 1e-15);
}

TEST(TrainConfig, ValidationNamesTheField) {
  TrainConfig cfg;
  cfg.method = MethodConfig::soft_mix();
  cfg.cage_enabled = true;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cage"), std::string::npos);
  }
  cfg = TrainConfig{};
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

namespace {

TrainConfig small_config(MethodConfig m) {
  TrainConfig cfg;
  cfg.method = m;
  cfg.batch_size = 32;
  cfg.iterations = 400;
  cfg.eval_every = 100;
  cfg.learning_rate = 0.05;
  return cfg;
}

}  // namespace

TEST(Train, LearnsTeacherTaskWithZeroGapUnderHardST) {
  const auto train_set = synthetic_task(SyntheticKind::RandomTeacherCircuit, 10, 1024, 3, 0);
  const auto test_set = synthetic_task(SyntheticKind::RandomTeacherCircuit, 10, 512, 3, 1);
  auto net = build_network({10, 2, 64, 2}, 1);
  auto cfg = small_config(MethodConfig::hard_st());
  cfg.iterations = 1200;
  cfg.eval_every = 300;
  const auto res = train(cfg, train_set, test_set, net);
  ASSERT_EQ(res.log.size(), 4u);
  for (const auto& row : res.log) {
    EXPECT_EQ(row.selection_gap, 0.0);
    EXPECT_EQ(row.computation_gap, 0.0);
  }
  EXPECT_GT(res.log.back().a_method, 0.7);
  EXPECT_EQ(res.tau_trace.size(), 1201u);
}

TEST(Train, LogsFinalStepWhenNotOnEvalBoundary) {
  const auto data = synthetic_task(SyntheticKind::Parity, 4, 0, 0);
  auto net = build_network({4, 2, 16, 2}, 1);
  auto cfg = small_config(MethodConfig::soft_mix());
  cfg.iterations = 250;
  const auto res = train(cfg, data, data, net);
  ASSERT_EQ(res.log.size(), 3u);
  EXPECT_EQ(res.log.back().iteration, 250u);
}

TEST(Train, IsDeterministicGivenSeeds) {
  const auto data = synthetic_task(SyntheticKind::TwoMoonsBinarized, 16, 512, 2);
  auto cfg = small_config(MethodConfig::gumbel_st());
  cfg.cage_enabled = true;
  auto a = build_network({16, 2, 32, 2}, 5);
  auto b = build_network({16, 2, 32, 2}, 5);
  const auto ra = train(cfg, data, data, a);
  const auto rb = train(cfg, data, data, b);
  ASSERT_EQ(ra.log.size(), rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    EXPECT_EQ(ra.log[i].a_method, rb.log[i].a_method);
    EXPECT_EQ(ra.log[i].loss, rb.log[i].loss);
    EXPECT_EQ(ra.log[i].tau_b, rb.log[i].tau_b);
  }
  EXPECT_EQ(a.layers[1].logits, b.layers[1].logits);
}

TEST(Train, CageTraceStartsAtMaximumAndStaysInRange) {
  const auto data = synthetic_task(SyntheticKind::RandomTeacherCircuit, 10, 1024, 1);
  auto cfg = small_config(MethodConfig::hard_st());
  cfg.cage_enabled = true;
  auto net = build_network({10, 2, 64, 2}, 2);
  const auto res = train(cfg, data, data, net);
  EXPECT_EQ(res.tau_trace.front(), 3.0);
  for (double t : res.tau_trace) {
    EXPECT_GE(t, 0.5);
    EXPECT_LE(t, 3.0);
  }
  EXPECT_LT(res.tau_trace.back(), res.tau_trace.front());
}

TEST(Train, NonFiniteLogitsAbortWithDiagnostic) {
  const auto data = synthetic_task(SyntheticKind::Parity, 4, 0, 0);
  auto net = build_network({4, 1, 8, 2}, 0);
  net.layers[0].logits[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    (void)train(small_config(MethodConfig::soft_mix()), data, data, net);
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos);
    EXPECT_NE(msg.find("non-finite"), std::string::npos);
  }
}

TEST(Train, RejectsMismatchedDataset) {
  const auto data = synthetic_task(SyntheticKind::Parity, 4, 0, 0);
  auto net = build_network({5, 1, 8, 2}, 0);
  EXPECT_THROW((void)train(small_config(MethodConfig::soft_mix()), data, data, net), ConfigError);
}

TEST(ConvergenceIterations, FirstCheckpointReachingTarget) {
  MetricsLog log(3);
  log[0] = {100, 0, 0.5};
  log[1] = {200, 0, 0.91};
  log[2] = {300, 0, 0.95};
  EXPECT_EQ(convergence_iterations(log, 0.9), 200u);
  EXPECT_FALSE(convergence_iterations(log, 0.99).has_value());
}

TEST(SingleNode, ReachesConfidenceAndSlowsWithTemperature) {
  const auto s1 = single_node_steps_to_confidence(0.5);
  const auto s2 = single_node_steps_to_confidence(2.0);
  ASSERT_TRUE(s1.has_value());
  ASSERT_TRUE(s2.has_value());
  EXPECT_LT(*s1, *s2);
  SingleNodeConfig capped;
  capped.max_steps = 3;
  EXPECT_FALSE(single_node_steps_to_confidence(1.0, capped).has_value());
}

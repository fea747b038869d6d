#include <gtest/gtest.h>

#include <sstream>
#include <vector>

#include "lgn/circuit.hpp"
#include "lgn/data.hpp"
#include "lgn/training.hpp"

using namespace lgn;

namespace {

Network trained_teacher_student(std::size_t dims) {
  const auto data = synthetic_task(SyntheticKind::RandomTeacherCircuit, dims, 512, 9);
  auto net = build_network({dims, 3, 48, 2}, 3);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.iterations = 150;
  cfg.eval_every = 150;
  (void)train(cfg, data, data, net);
  return net;
}

}  // namespace

TEST(Circuit, ExtractionMirrorsArgmaxAndWiring) {
  const auto net = build_network({10, 2, 8, 2}, 1);
  const auto c = extract_circuit(net);
  EXPECT_NO_THROW(c.validate());
  ASSERT_EQ(c.nodes.size(), 16u);
  EXPECT_EQ(c.nodes[3].gate, net.layers[0].selected_gate(3));
  EXPECT_EQ(c.nodes[3].src_a, net.layers[0].src_a[3]);
  // second layer sources are offset past the ten inputs
  EXPECT_EQ(c.nodes[8 + 5].src_b, 10 + net.layers[1].src_b[5]);
  EXPECT_EQ(c.output_offset(), 18u);
}

TEST(Circuit, TextRoundTrip) {
  const auto c = extract_circuit(build_network({10, 3, 12, 3}, 2));
  std::stringstream ss;
  write_circuit(ss, c);
  EXPECT_EQ(ss.str().rfind("lgn-circuit 1\n", 0), 0u);
  const auto back = read_circuit(ss);
  EXPECT_EQ(back, c);
}

TEST(Circuit, MalformedTextIsADataError) {
  std::stringstream a("lgn-circuit 1\ninputs 2\nlayers 1 2\nclasses 2 1\nAND 0 1\nFOO 0 1\nend\n");
  EXPECT_THROW((void)read_circuit(a), DataError);
  std::stringstream b("lgn-circuit 1\ninputs 2\nlayers 1 2\nclasses 2 1\nAND 0 1\nOR 0 5\nend\n");
  EXPECT_THROW((void)read_circuit(b), DataError);
  std::stringstream c("lgn-circuit 9\n");
  EXPECT_THROW((void)read_circuit(c), DataError);
  std::stringstream d("lgn-circuit 1\ninputs 2\nlayers 1 2\nclasses 2 1\nAND 0 1\n");
  EXPECT_THROW((void)read_circuit(d), DataError);
}

TEST(Circuit, GateWordsMatchTruthTables) {
  const Word a = 0b1100, b = 0b1010;
  for (const auto& g : kGates) {
    const Word w = gate_word(g.id, a, b);
    for (int bit = 0; bit < 4; ++bit) {
      const bool av = (a >> bit) & 1U, bv = (b >> bit) & 1U;
      EXPECT_EQ(((w >> bit) & 1U) != 0U, truth_table_bit(g.truth_table, av, bv)) << g.name;
    }
  }
}

TEST(Circuit, BitPackedScoresEqualReferenceOnRandomInputs) {
  const auto net = trained_teacher_student(14);
  const auto c = extract_circuit(net);
  const auto rep = verify_equivalence(c, net, 10000, 5);
  EXPECT_TRUE(rep.passed) << rep.describe();
  EXPECT_EQ(rep.samples, 10000u);
}

TEST(Circuit, ExhaustiveEquivalenceOnSmallWidth) {
  const auto net = trained_teacher_student(12);
  const auto c = extract_circuit(net);
  const auto rows = exhaustive_binary_rows(12);
  const auto rep = verify_equivalence(c, net, RowMatrix{rows, 12});
  EXPECT_TRUE(rep.passed) << rep.describe();
  EXPECT_EQ(rep.samples, 4096u);
}

TEST(Circuit, SampleCountsOffWordBoundary) {
  const auto net = build_network({9, 2, 20, 2}, 4);
  const auto c = extract_circuit(net);
  for (std::size_t n : {1u, 63u, 64u, 65u, 130u}) {
    const auto rows = random_binary_rows(9, n, n);
    const auto packed = eval_bitpacked(c, BitBatch::pack(RowMatrix{rows, 9}));
    EXPECT_EQ(packed, hard_class_scores(net, RowMatrix{rows, 9})) << n;
  }
}

TEST(Circuit, RealInputsAreThresholdedLikeTheHardPipeline) {
  const auto net = build_network({9, 2, 20, 2}, 4);
  const auto c = extract_circuit(net);
  std::vector<double> rows{0.5, 0.51, 0.0, 1.0, 0.2, 0.8, 0.49, 0.5000001, 0.7};
  const auto rep = verify_equivalence(c, net, RowMatrix{rows, 9});
  EXPECT_TRUE(rep.passed) << rep.describe();
}

TEST(Circuit, CorruptedGateIsLocated) {
  const auto net = trained_teacher_student(12);
  auto c = extract_circuit(net);
  // Flip one first-layer gate to its negation; it must feed the output, so
  // search for a node whose corruption changes some prediction.
  bool found = false;
  for (std::size_t i = 0; i < c.nodes.size() && !found; ++i) {
    auto bad = c;
    bad.nodes[i].gate = GateId{15 - bad.nodes[i].gate.index()};
    const auto rep = verify_equivalence(bad, net, 10000, 1);
    if (rep.passed) continue;
    found = true;
    ASSERT_TRUE(rep.first_sample.has_value());
    ASSERT_TRUE(rep.first_wire.has_value());
    EXPECT_EQ(*rep.first_wire, c.input_width + i);
    EXPECT_NE(rep.describe().find("first divergent wire"), std::string::npos);
  }
  EXPECT_TRUE(found);
}

TEST(Circuit, EmptySampleSetIsAVacuousPass) {
  const auto net = build_network({4, 1, 4, 2}, 0);
  const auto c = extract_circuit(net);
  const auto rep = verify_equivalence(c, net, 0, 0);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.describe(), "pass (vacuous): 0 samples");
}

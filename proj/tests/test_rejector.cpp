#include "l2d/rejector.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "l2d/rng.hpp"

namespace l2d {
namespace {

std::vector<double> random_features(Rng& rng, int d) {
  std::vector<double> x(d);
  for (double& v : x) v = rng.uniform(-3.0, 3.0);
  return x;
}

// Naive re-implementation of the linear head: independent of score_head.
std::vector<double> linear_oracle(const RejectorModel& m, int head,
                                  const std::vector<double>& x) {
  std::vector<double> out(m.num_agents);
  for (int k = 0; k < m.num_agents; ++k) {
    double s = 0.0;
    for (int i = 0; i < m.input_dim; ++i)
      s += m.head_params[head][k * m.input_dim + i] * x[i];
    out[k] = s + m.head_params[head][m.num_agents * m.input_dim + k];
  }
  return out;
}

// Same for the one-hidden-layer head, written as plain triple loops.
std::vector<double> mlp_oracle(const RejectorModel& m, int head,
                               const std::vector<double>& x) {
  const auto& p = m.head_params[head];
  const int d = m.input_dim, h = m.hidden, a = m.num_agents;
  std::vector<double> z(h);
  for (int k = 0; k < h; ++k) {
    double s = p[h * d + k];
    for (int i = 0; i < d; ++i) s += p[k * d + i] * x[i];
    z[k] = std::max(0.0, s);
  }
  std::vector<double> out(a);
  for (int k = 0; k < a; ++k) {
    double s = p[h * d + h + a * h + k];
    for (int i = 0; i < h; ++i) s += p[h * d + h + k * h + i] * z[i];
    out[k] = s;
  }
  return out;
}

TEST(InitModel, SeedDeterminism) {
  const RejectorModel a = init_model(Architecture::linear, 4, 3, 42);
  const RejectorModel b = init_model(Architecture::linear, 4, 3, 42);
  EXPECT_EQ(a.head_params[0], b.head_params[0]);
  EXPECT_EQ(a.head_params[1], b.head_params[1]);
  const RejectorModel c = init_model(Architecture::linear, 4, 3, 43);
  EXPECT_NE(a.head_params[0], c.head_params[0]);
}

TEST(InitModel, WeightsInsideHalfWidthAndBiasZero) {
  const int d = 9;
  const RejectorModel m = init_model(Architecture::linear, d, 3, 7);
  const double hw = 1.0 / 3.0;
  for (int k = 0; k < 3 * d; ++k) {
    EXPECT_GE(m.head_params[0][k], -hw);
    EXPECT_LT(m.head_params[0][k], hw);
  }
  for (int k = 0; k < 3; ++k) EXPECT_EQ(m.head_params[0][3 * d + k], 0.0);
}

TEST(InitModel, BadDimensions) {
  EXPECT_THROW(init_model(Architecture::linear, 0, 3, 1), BadDimensionError);
  EXPECT_THROW(init_model(Architecture::linear, 4, 1, 1), BadDimensionError);
  EXPECT_THROW(init_model(Architecture::mlp1, 4, 3, 1, 0), BadDimensionError);
}

TEST(Score, ZeroWeightsGiveZeroScores) {
  RejectorModel m = init_model(Architecture::linear, 3, 3, 1);
  for (auto& params : m.head_params) params.assign(params.size(), 0.0);
  const auto [rs, re] = score(m, std::vector<double>{1.0, -2.0, 0.5});
  for (double s : rs) EXPECT_EQ(s, 0.0);
  for (double s : re) EXPECT_EQ(s, 0.0);
}

TEST(Score, BasisVectorPicksOutColumn) {
  RejectorModel m = init_model(Architecture::linear, 3, 3, 1);
  const std::vector<double> e1{1.0, 0.0, 0.0};
  const auto [rs, re] = score(m, e1);
  for (int k = 0; k < 3; ++k) {
    EXPECT_DOUBLE_EQ(rs[k], m.head_params[0][k * 3]);
    EXPECT_DOUBLE_EQ(re[k], m.head_params[1][k * 3]);
  }
}

TEST(Score, MatchesNaiveOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const RejectorModel lin = init_model(Architecture::linear, 5, 4, 100 + trial);
    const std::vector<double> x = random_features(rng, 5);
    const auto [ls, le] = score(lin, x);
    const std::vector<double> os = linear_oracle(lin, 0, x);
    const std::vector<double> oe = linear_oracle(lin, 1, x);
    for (int k = 0; k < 4; ++k) {
      EXPECT_NEAR(ls[k], os[k], 1e-12);
      EXPECT_NEAR(le[k], oe[k], 1e-12);
    }

    const RejectorModel mlp = init_model(Architecture::mlp1, 5, 4, 200 + trial, 8);
    const auto [ms, me] = score(mlp, x);
    const std::vector<double> ps = mlp_oracle(mlp, 0, x);
    const std::vector<double> pe = mlp_oracle(mlp, 1, x);
    for (int k = 0; k < 4; ++k) {
      EXPECT_NEAR(ms[k], ps[k], 1e-12);
      EXPECT_NEAR(me[k], pe[k], 1e-12);
    }
  }
}

TEST(Score, DimensionMismatch) {
  const RejectorModel m = init_model(Architecture::linear, 3, 3, 1);
  EXPECT_THROW(score(m, std::vector<double>{1.0, 2.0}), DimensionMismatchError);
}

TEST(Score, PinnedZeroForcesAgentZeroScore) {
  const RejectorModel m = init_model(Architecture::linear, 3, 3, 9, 64, true);
  Rng rng(6);
  const auto [rs, re] = score(m, random_features(rng, 3));
  EXPECT_EQ(rs[0], 0.0);
  EXPECT_EQ(re[0], 0.0);
  EXPECT_NE(rs[1], 0.0);
}

TEST(DecidePerHead, ExamplesAndTieRule) {
  EXPECT_EQ(decide_per_head(std::vector<double>{0.0, 2.0, 1.0}).value, 1);
  EXPECT_EQ(decide_per_head(std::vector<double>{0.0, 0.0, 0.0}).value, 0);
  EXPECT_EQ(decide_per_head(std::vector<double>{5.0, 5.0, 6.0}).value, 2);
}

TEST(DecidePerHead, ShiftInvariance) {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> rbar(4);
    for (double& v : rbar) v = rng.uniform(-10.0, 10.0);
    const double k = rng.uniform(-5.0, 5.0);
    std::vector<double> shifted = rbar;
    for (double& v : shifted) v += k;
    EXPECT_EQ(decide_per_head(rbar).value, decide_per_head(shifted).value);
  }
}

TEST(DecideJoint, LemmaArithmetic) {
  // sums (0,3,4): the single-agent rule picks agent 2
  EXPECT_EQ(decide_joint(std::vector<double>{0.0, 2.0, 1.0},
                         std::vector<double>{0.0, 1.0, 3.0})
                .value,
            2);
  // start favors 1 by +5, end favors 2 by +1: sums favor agent 1
  EXPECT_EQ(decide_joint(std::vector<double>{0.0, 5.0, 0.0},
                         std::vector<double>{0.0, 0.0, 1.0})
                .value,
            1);
}

TEST(DecideJoint, HeadExchangeSymmetry) {
  Rng rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> a(3), b(3);
    for (double& v : a) v = rng.uniform(-4.0, 4.0);
    for (double& v : b) v = rng.uniform(-4.0, 4.0);
    EXPECT_EQ(decide_joint(a, b).value, decide_joint(b, a).value);
  }
}

TEST(DecideJoint, AgreementWithPerHead) {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> a(4), b(4);
    for (double& v : a) v = rng.uniform(-4.0, 4.0);
    for (double& v : b) v = rng.uniform(-4.0, 4.0);
    const int da = decide_per_head(a).value;
    const int db = decide_per_head(b).value;
    if (da == db) EXPECT_EQ(decide_joint(a, b).value, da);
  }
}

AgentPredictionRecord three_agent_record() {
  AgentPredictionRecord rec;
  rec.query_id = "q0";
  rec.features = {0.5, -1.0};
  rec.gold = SpanPair{3, 7};
  rec.predictions = {{3, 7}, {4, 8}, {5, 9}};
  return rec;
}

TEST(Allocate, ZeroModelKeepsMainModel) {
  RejectorModel m = init_model(Architecture::linear, 2, 3, 1);
  for (auto& params : m.head_params) params.assign(params.size(), 0.0);
  const AgentPredictionRecord rec = three_agent_record();
  const Allocation a = allocate(m, rec, AllocationMode::joint);
  EXPECT_EQ(a.start_agent.value, 0);
  EXPECT_EQ(a.span, rec.predictions[0]);
}

TEST(Allocate, PerHeadComposesSpans) {
  RejectorModel m = init_model(Architecture::linear, 2, 3, 1);
  for (auto& params : m.head_params) params.assign(params.size(), 0.0);
  // start head favors agent 1, end head favors agent 2, via biases
  m.head_params[0][2 * 3 + 1] = 1.0;
  m.head_params[1][2 * 3 + 2] = 1.0;
  const AgentPredictionRecord rec = three_agent_record();
  const Allocation a = allocate(m, rec, AllocationMode::per_head);
  EXPECT_EQ(a.start_agent.value, 1);
  EXPECT_EQ(a.end_agent.value, 2);
  EXPECT_EQ(a.span, (SpanPair{4, 9}));

  // joint mode sums the biases: agents 1 and 2 tie at 1.0 < nothing beats
  // them... sums are (0, 1, 1) so the tie goes to agent 1
  const Allocation j = allocate(m, rec, AllocationMode::joint);
  EXPECT_EQ(j.start_agent.value, 1);
  EXPECT_EQ(j.span, rec.predictions[1]);
}

TEST(SaveLoad, RoundTripIsBitExact) {
  const std::string path = std::filesystem::temp_directory_path() / "l2d_model_rt.bin";
  Rng rng(14);
  for (Architecture arch : {Architecture::linear, Architecture::mlp1}) {
    const RejectorModel m = init_model(arch, 6, 3, 77, 16, arch == Architecture::mlp1);
    save_model(m, path);
    const RejectorModel back = load_model(path);
    EXPECT_EQ(back.arch, m.arch);
    EXPECT_EQ(back.input_dim, m.input_dim);
    EXPECT_EQ(back.num_agents, m.num_agents);
    EXPECT_EQ(back.hidden, m.hidden);
    EXPECT_EQ(back.pinned_zero, m.pinned_zero);
    EXPECT_EQ(back.seed, m.seed);
    EXPECT_EQ(back.head_params[0], m.head_params[0]);
    EXPECT_EQ(back.head_params[1], m.head_params[1]);
    for (int i = 0; i < 100; ++i) {
      const std::vector<double> x = random_features(rng, 6);
      EXPECT_EQ(score(m, x), score(back, x));
    }
  }
  std::filesystem::remove(path);
}

TEST(SaveLoad, TruncatedAndCorruptedFiles) {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = dir / "l2d_model_bad.bin";
  const RejectorModel m = init_model(Architecture::linear, 4, 3, 5);
  save_model(m, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(load_model(path), FormatVersionMismatchError);

  bytes[bytes.size() - 20] ^= 0x5a;  // flip payload bits, keep length
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_model(path), ChecksumMismatchError);

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "not a model";
  }
  EXPECT_THROW(load_model(path), FormatVersionMismatchError);
  std::filesystem::remove(path);
}

TEST(SaveLoad, UnwritablePathIsIoError) {
  const RejectorModel m = init_model(Architecture::linear, 4, 3, 5);
  EXPECT_THROW(save_model(m, "/nonexistent-dir/model.bin"), IoError);
  EXPECT_THROW(load_model("/nonexistent-dir/model.bin"), IoError);
}

}  // namespace
}  // namespace l2d

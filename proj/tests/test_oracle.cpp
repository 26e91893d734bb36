#include "l2d/oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "l2d/rng.hpp"

namespace l2d {
namespace {

CostParams costs_for(std::vector<double> alpha, std::vector<double> beta) {
  CostParams p;
  p.agent_gflops.assign(alpha.size() + 1, 1.0);
  p.alpha = std::move(alpha);
  p.beta = std::move(beta);
  return p;
}

// One-point world with explicit per-head error rows.
SyntheticWorld one_point_world(std::vector<double> err_start, std::vector<double> err_end,
                               CostParams costs) {
  SyntheticWorld world;
  world.costs = std::move(costs);
  WorldPoint p;
  p.features = {0.0};
  p.mass = 1.0;
  p.gold = SpanPair{1, 2};
  p.err[0] = std::move(err_start);
  p.err[1] = std::move(err_end);
  world.points.push_back(std::move(p));
  return world;
}

// Random strict-mode world over a few one-hot-feature points.
SyntheticWorld random_strict_world(Rng& rng, int num_points, int num_experts) {
  SyntheticWorld world;
  world.costs.agent_gflops.assign(num_experts + 1, 1.0);
  for (int j = 0; j < num_experts; ++j) {
    const double a = rng.uniform();
    world.costs.alpha.push_back(a);
    world.costs.beta.push_back(rng.uniform(0.0, 1.0 - a));
  }
  std::vector<double> mass(num_points);
  double total = 0.0;
  for (double& m : mass) {
    m = rng.uniform(0.05, 1.0);
    total += m;
  }
  for (int i = 0; i < num_points; ++i) {
    WorldPoint p;
    p.features.assign(num_points, 0.0);
    p.features[i] = 1.0;
    p.mass = mass[i] / total;
    p.gold = SpanPair{i % 8, i % 8 + 1};
    for (auto& head_err : p.err) {
      head_err.resize(num_experts + 1);
      for (double& e : head_err) e = rng.uniform();
    }
    world.points.push_back(std::move(p));
  }
  // make the masses sum to exactly 1
  double acc = 0.0;
  for (int i = 0; i + 1 < num_points; ++i) acc += world.points[i].mass;
  world.points.back().mass = 1.0 - acc;
  return world;
}

TEST(GenerateWorld, PerfectExpertEverywhere) {
  ClusterSpec spec;
  spec.num_clusters = 1;
  spec.feature_dim = 2;
  spec.centers = {{0.0, 0.0}};
  spec.points_per_cluster = 20;
  spec.expert_competent = {{0}};
  spec.competent_err = 0.0;
  spec.outside_err = 0.6;
  spec.main_err = {0.3};
  const SyntheticWorld world = generate_world(spec, costs_for({1.0}, {0.0}), 42);
  for (const WorldPoint& p : world.points)
    for (const auto& head_err : p.err) EXPECT_EQ(head_err[1], 0.0);
}

TEST(GenerateWorld, MembershipByNearestCenter) {
  ClusterSpec spec = default_cluster_spec();
  spec.competent_err = 0.05;
  spec.outside_err = 0.6;
  const SyntheticWorld world = generate_world(spec, default_world_costs(), 7);
  for (const WorldPoint& p : world.points) {
    // independent nearest-center recomputation
    const double d0 = std::hypot(p.features[0] + 2.0, p.features[1]);
    const double d1 = std::hypot(p.features[0] - 2.0, p.features[1]);
    const int member = d0 <= d1 ? 0 : 1;
    const double expected_e1 = member == 1 ? 0.05 : 0.6;
    const double expected_e2 = member == 0 ? 0.05 : 0.6;
    EXPECT_EQ(p.err[0][1], expected_e1);
    EXPECT_EQ(p.err[0][2], expected_e2);
    EXPECT_EQ(p.err[0][0], spec.main_err[member]);
  }
}

TEST(GenerateWorld, SeedDeterminismAndBadSpec) {
  const ClusterSpec spec = default_cluster_spec();
  const SyntheticWorld a = generate_world(spec, default_world_costs(), 11);
  const SyntheticWorld b = generate_world(spec, default_world_costs(), 11);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].features, b.points[i].features);
    EXPECT_EQ(a.points[i].err[0], b.points[i].err[0]);
  }
  ClusterSpec bad = spec;
  bad.competent_err = 1.5;
  EXPECT_THROW(generate_world(bad, default_world_costs(), 1), BadSpecError);
  bad = spec;
  bad.expert_competent = {{0}, {5}};
  EXPECT_THROW(generate_world(bad, default_world_costs(), 1), BadSpecError);
}

TEST(SampleLog, DegenerateErrorRates) {
  ClusterSpec spec = default_cluster_spec();
  spec.competent_err = 0.0;
  spec.outside_err = 0.0;
  spec.main_err = {1.0, 1.0};
  const SyntheticWorld world = generate_world(spec, default_world_costs(), 3);
  const auto log = sample_log(world, 500, 4);
  for (const auto& rec : log) {
    EXPECT_EQ(rec.predictions[1], rec.gold);  // eta = 0: always gold
    EXPECT_EQ(rec.predictions[2], rec.gold);
    EXPECT_NE(rec.predictions[0].start, rec.gold.start);  // eta = 1: never
    EXPECT_NE(rec.predictions[0].end, rec.gold.end);
  }
}

TEST(SampleLog, EmpiricalRatesConcentrate) {
  ClusterSpec spec = default_cluster_spec();
  const SyntheticWorld world = generate_world(spec, default_world_costs(), 5);
  const int n = 100000;
  const auto log = sample_log(world, n, 6);
  // expert 1 is wrong w.p. 0.6 on cluster 0 and 0.05 on cluster 1; pool over
  // the mass-weighted mixture (clusters are equally likely)
  const double expected = 0.5 * 0.6 + 0.5 * 0.05;
  int wrong = 0;
  for (const auto& rec : log) wrong += rec.predictions[1].start != rec.gold.start;
  const double rate = static_cast<double>(wrong) / n;
  const double sigma = std::sqrt(expected * (1.0 - expected) / n);
  EXPECT_NEAR(rate, expected, 3.0 * sigma);
}

TEST(BayesDecide, LemmaArithmetic) {
  EXPECT_EQ(bayes_decide({0.4, 0.2}, costs_for({1.0}, {0.1})).value, 1);
  // 0.3 <= 0.3: the tie keeps the main model
  EXPECT_EQ(bayes_decide({0.3, 0.3}, costs_for({1.0}, {0.0})).value, 0);
}

TEST(BruteForce, Examples) {
  const auto [a, risk_a] = brute_force_conditional_min({0.0, 1.0}, costs_for({1.0}, {0.0}));
  EXPECT_EQ(a.value, 0);
  EXPECT_EQ(risk_a, 0.0);
  const auto [b, risk_b] = brute_force_conditional_min({1.0, 0.0}, costs_for({1.0}, {0.25}));
  EXPECT_EQ(b.value, 1);
  EXPECT_EQ(risk_b, 0.25);
}

TEST(BayesDecide, AgreesWithBruteForceOnRandomRows) {
  Rng rng(17);
  for (int trial = 0; trial < 10000; ++trial) {
    const int experts = 1 + static_cast<int>(rng.uniform_int(3));
    std::vector<double> alpha(experts), beta(experts);
    for (int j = 0; j < experts; ++j) {
      alpha[j] = rng.uniform();
      beta[j] = rng.uniform(0.0, 1.0 - alpha[j]);
    }
    const CostParams p = costs_for(alpha, beta);
    std::vector<double> err(experts + 1);
    for (double& e : err) e = rng.uniform();
    const auto [brute, risk] = brute_force_conditional_min(err, p);
    EXPECT_EQ(bayes_decide(err, p).value, brute.value);
    const std::vector<double> eta = eta_row(err, p);
    EXPECT_DOUBLE_EQ(risk, *std::min_element(eta.begin(), eta.end()));
  }
}

TEST(BayesRisk, PerfectAgentsZeroRisk) {
  const SyntheticWorld world =
      one_point_world({0.0, 0.0}, {0.0, 0.0}, costs_for({1.0}, {0.0}));
  EXPECT_EQ(bayes_risk(world, world.costs, AllocationMode::per_head), 0.0);
  EXPECT_EQ(bayes_risk(world, world.costs, AllocationMode::joint), 0.0);
}

TEST(BayesRisk, JointDominatesPerHeadStrictlyWhenHeadsDisagree) {
  // start head prefers the expert, end head prefers the main model
  const SyntheticWorld world =
      one_point_world({0.9, 0.1}, {0.1, 0.9}, costs_for({1.0}, {0.0}));
  const double per_head = bayes_risk(world, world.costs, AllocationMode::per_head);
  const double joint = bayes_risk(world, world.costs, AllocationMode::joint);
  EXPECT_DOUBLE_EQ(per_head, 0.2);
  EXPECT_DOUBLE_EQ(joint, 1.0);
  EXPECT_GT(joint, per_head);
}

TEST(BayesRisk, TwoPointHandArithmetic) {
  SyntheticWorld world;
  world.costs = costs_for({1.0}, {0.1});
  for (int i = 0; i < 2; ++i) {
    WorldPoint p;
    p.features = {static_cast<double>(i)};
    p.mass = 0.5;
    p.gold = SpanPair{0, 1};
    world.points.push_back(p);
  }
  world.points[0].err[0] = {0.3, 0.1};  // eta = (0.3, 0.2) -> 0.2
  world.points[0].err[1] = {0.0, 0.5};  // eta = (0.0, 0.6) -> 0.0
  world.points[1].err[0] = {0.8, 0.2};  // eta = (0.8, 0.3) -> 0.3
  world.points[1].err[1] = {0.4, 0.9};  // eta = (0.4, 1.0) -> 0.4
  const double expected = 0.5 * (0.2 + 0.0) + 0.5 * (0.3 + 0.4);
  EXPECT_DOUBLE_EQ(bayes_risk(world, world.costs, AllocationMode::per_head), expected);
}

TEST(BayesRisk, JointDominancePropertyOnRandomWorlds) {
  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const SyntheticWorld world =
        random_strict_world(rng, 2 + static_cast<int>(rng.uniform_int(4)),
                            1 + static_cast<int>(rng.uniform_int(3)));
    EXPECT_GE(bayes_risk(world, world.costs, AllocationMode::joint),
              bayes_risk(world, world.costs, AllocationMode::per_head) - 1e-12);
  }
}

TEST(BayesAllocation, ExpertFractionShrinksAsBetaGrows) {
  const SyntheticWorld world =
      generate_world(default_cluster_spec(), default_world_costs(), 23);
  double previous = 1.0;
  for (double beta1 = 0.0; beta1 <= 0.5 + 1e-12; beta1 += 0.05) {
    CostParams params = world.costs;
    params.alpha = {1.0, 1.0};
    params.beta = {beta1, 1.42 * beta1};
    const std::vector<double> alloc =
        bayes_allocation(world, params, AllocationMode::joint);
    const double expert_fraction = 1.0 - alloc[0];
    EXPECT_LE(expert_fraction, previous + 1e-12);
    previous = expert_fraction;
  }
}

TEST(EmpiricalRisk, HardwiredBayesModelMatchesBayesRisk) {
  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const int num_points = 3 + static_cast<int>(rng.uniform_int(3));
    const SyntheticWorld world = random_strict_world(rng, num_points, 2);
    // one-hot features let a linear head realize any per-point decision
    RejectorModel per_head_model = init_model(Architecture::linear, num_points, 3, 1);
    RejectorModel joint_model = per_head_model;
    for (auto& params : per_head_model.head_params) params.assign(params.size(), 0.0);
    for (auto& params : joint_model.head_params) params.assign(params.size(), 0.0);
    for (int i = 0; i < num_points; ++i) {
      const WorldPoint& p = world.points[i];
      for (int h = 0; h < 2; ++h) {
        const int bayes = bayes_decide(p.err[h], world.costs).value;
        per_head_model.head_params[h][bayes * num_points + i] = 1.0;
      }
      int joint_best = 0;
      double best = detail::joint_eta_sum(p, 0, world.costs, BetaMode::per_head);
      for (int j = 1; j < 3; ++j) {
        const double s = detail::joint_eta_sum(p, j, world.costs, BetaMode::per_head);
        if (s < best) {
          best = s;
          joint_best = j;
        }
      }
      for (int h = 0; h < 2; ++h)
        joint_model.head_params[h][joint_best * num_points + i] = 1.0;
    }
    EXPECT_NEAR(empirical_deferral_risk(per_head_model, world, world.costs,
                                        AllocationMode::per_head),
                bayes_risk(world, world.costs, AllocationMode::per_head), 1e-12);
    EXPECT_NEAR(
        empirical_deferral_risk(joint_model, world, world.costs, AllocationMode::joint),
        bayes_risk(world, world.costs, AllocationMode::joint), 1e-12);
  }
}

TEST(EmpiricalRisk, AlwaysMainModelEqualsMainErrorMass) {
  Rng rng(31);
  const SyntheticWorld world = random_strict_world(rng, 4, 2);
  RejectorModel model = init_model(Architecture::linear, 4, 3, 1);
  for (auto& params : model.head_params) params.assign(params.size(), 0.0);
  model.head_params[0][3 * 4 + 0] = 5.0;  // bias strongly favors agent 0
  model.head_params[1][3 * 4 + 0] = 5.0;
  double expected = 0.0;
  for (const WorldPoint& p : world.points)
    expected += p.mass * (p.err[0][0] + p.err[1][0]);
  EXPECT_NEAR(
      empirical_deferral_risk(model, world, world.costs, AllocationMode::per_head),
      expected, 1e-12);
}

TEST(EmpiricalRisk, LogEvaluationMatchesNaiveLoop) {
  const SyntheticWorld world =
      generate_world(default_cluster_spec(), default_world_costs(), 37);
  const auto log = sample_log(world, 500, 38);
  const RejectorModel model = init_model(Architecture::linear, 2, 3, 39);
  const double fast =
      empirical_deferral_risk(model, log, world.costs, AllocationMode::per_head);
  double naive = 0.0;
  for (const auto& rec : log) {
    const auto [rs, re] = score(model, rec.features);
    const int ds = decide_per_head(rs).value;
    const int de = decide_per_head(re).value;
    naive += agent_cost(AgentId{ds}, rec.predictions[ds].start, rec.gold.start,
                        world.costs) +
             agent_cost(AgentId{de}, rec.predictions[de].end, rec.gold.end, world.costs);
  }
  naive /= static_cast<double>(log.size());
  EXPECT_NEAR(fast, naive, 1e-12);
}

TEST(GammaTransform, ZeroMapsToZeroOnEveryBranch) {
  for (double nu : {0.0, 0.5, 1.0, 1.5, 2.0, 4.0})
    for (int n : {2, 3, 4}) EXPECT_NEAR(gamma_transform(0.0, nu, n), 0.0, 1e-15);
}

TEST(GammaTransform, LogSoftmaxBranchAtOne) {
  EXPECT_NEAR(gamma_transform(1.0, 1.0, 2), std::log(2.0), 1e-12);
  EXPECT_NEAR(gamma_transform(1.0, 1.0, 7), std::log(2.0), 1e-12);
}

TEST(GammaTransform, MaeBranchIsLinear) {
  EXPECT_DOUBLE_EQ(gamma_transform(0.5, 2.0, 3), 0.5 / 3.0);
  EXPECT_DOUBLE_EQ(gamma_transform(0.25, 4.0, 2), 0.25 / (3.0 * 8.0));
}

TEST(GammaTransform, DomainChecks) {
  EXPECT_THROW(gamma_transform(-0.01, 1.0, 2), DomainErrorL2d);
  EXPECT_THROW(gamma_transform(1.01, 1.0, 2), DomainErrorL2d);
  EXPECT_THROW(gamma_transform(0.5, 1.0, 1), BadDimensionError);
}

TEST(GammaTransform, NonDecreasingOnTheTestGrid) {
  for (double nu : {0.0, 0.5, 1.0, 1.5, 2.0, 4.0}) {
    for (int n : {2, 3, 4}) {
      double prev = 0.0;
      for (int i = 0; i <= 10000; ++i) {
        const double u = static_cast<double>(i) / 10000.0;
        const double v = gamma_transform(u, nu, n);
        EXPECT_GE(v, prev - 1e-15) << "nu=" << nu << " n=" << n << " u=" << u;
        prev = v;
      }
    }
  }
}

TEST(GammaTransform, ContinuousAcrossBranchSeams) {
  for (int n : {2, 3, 4}) {
    EXPECT_NEAR(gamma_transform(0.7, 1.0 - 1e-7, n), gamma_transform(0.7, 1.0, n), 1e-5);
    EXPECT_NEAR(gamma_transform(0.7, 1.0 + 1e-7, n), gamma_transform(0.7, 1.0, n), 1e-5);
    EXPECT_NEAR(gamma_transform(0.7, 2.0 - 1e-7, n), gamma_transform(0.7, 2.0, n), 1e-5);
  }
}

TEST(GammaInverse, ZeroAndOutOfRange) {
  EXPECT_EQ(gamma_inverse(0.0, 1.0, 2, 1e-10), 0.0);
  const double t_max = gamma_transform(1.0, 1.0, 2);
  EXPECT_THROW(gamma_inverse(t_max + 1.0, 1.0, 2, 1e-10), OutOfRangeError);
  EXPECT_THROW(gamma_inverse(-0.5, 1.0, 2, 1e-10), OutOfRangeError);
}

TEST(GammaInverse, RoundTripAcrossTheGrid) {
  for (double nu : {0.0, 0.5, 1.0, 1.5, 2.0, 4.0}) {
    for (int n : {2, 3, 4}) {
      const double t_max = gamma_transform(1.0, nu, n);
      for (int i = 1; i < 20; ++i) {
        const double u = 0.05 * i;
        const double t = gamma_transform(u, nu, n);
        const double back = gamma_inverse(t, nu, n, 1e-12);
        EXPECT_NEAR(gamma_transform(back, nu, n), t, 1e-10);
        if (t_max > 1e-9) EXPECT_NEAR(back, u, 1e-6);
      }
    }
  }
}

TEST(WeightedSurrogateInf, MatchesFineGridSearchOnBinary) {
  // two-class case: the conditional surrogate risk reduces to a function of
  // the softmax weight sigma; scan it as an independent check
  Rng rng(41);
  for (double nu : {0.0, 0.5, 1.0, 1.5, 2.0, 4.0}) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::vector<double> tau{rng.uniform(), rng.uniform()};
      const SurrogateSpec spec(nu, 2);
      double grid_best = std::numeric_limits<double>::infinity();
      for (int i = 1; i < 20000; ++i) {
        const double sigma = static_cast<double>(i) / 20000.0;
        const std::vector<double> scores{std::log(sigma), std::log(1.0 - sigma)};
        const double risk = tau[0] * comp_sum_surrogate(scores, 0, spec) +
                            tau[1] * comp_sum_surrogate(scores, 1, spec);
        grid_best = std::min(grid_best, risk);
      }
      const double closed = detail::weighted_surrogate_inf(tau, nu);
      EXPECT_LE(closed, grid_best + 1e-9) << "nu=" << nu;
      EXPECT_NEAR(closed, grid_best, 1e-4) << "nu=" << nu;
    }
  }
}

TEST(BoundCheck, BayesModelHasZeroLeftSide) {
  Rng rng(43);
  const SyntheticWorld world = random_strict_world(rng, 4, 2);
  RejectorModel model = init_model(Architecture::linear, 4, 3, 1);
  for (auto& params : model.head_params) params.assign(params.size(), 0.0);
  for (int i = 0; i < 4; ++i)
    for (int h = 0; h < 2; ++h) {
      const int bayes = bayes_decide(world.points[i].err[h], world.costs).value;
      model.head_params[h][bayes * 4 + i] = 1.0;
    }
  const BoundReport report = bound_check(world, model, world.costs, 1.0);
  EXPECT_NEAR(report.true_excess, 0.0, 1e-12);
  EXPECT_TRUE(report.holds);
}

TEST(BoundCheck, HoldsOnRandomStrictWorldsAcrossNu) {
  Rng rng(47);
  for (double nu : {0.5, 1.0, 2.0}) {
    for (int trial = 0; trial < 100; ++trial) {
      const int num_points = 2 + static_cast<int>(rng.uniform_int(4));
      const SyntheticWorld world =
          random_strict_world(rng, num_points, 1 + static_cast<int>(rng.uniform_int(2)));
      const RejectorModel model = init_model(
          Architecture::linear, num_points, world.num_agents(), 1000 + trial);
      const BoundReport report = bound_check(world, model, world.costs, nu);
      EXPECT_TRUE(report.holds) << "nu=" << nu << " trial=" << trial
                                << " lhs=" << report.true_excess
                                << " rhs=" << report.bound_value;
      EXPECT_GE(report.surrogate_excess, -1e-12);
    }
  }
}

TEST(BoundCheck, PermissiveWorldRejected) {
  const SyntheticWorld world =
      one_point_world({0.5, 0.5}, {0.5, 0.5}, costs_for({1.0}, {0.17}));
  const RejectorModel model = init_model(Architecture::linear, 1, 2, 1);
  EXPECT_THROW(bound_check(world, model, world.costs, 1.0),
               NonNegativeTauViolatedError);
}

}  // namespace
}  // namespace l2d

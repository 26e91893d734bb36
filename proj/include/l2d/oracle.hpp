#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/losses.hpp"
#include "l2d/rejector.hpp"
#include "l2d/rng.hpp"

namespace l2d {

// Whether a deferred query pays beta once per head (the deferral loss sums
// both heads, so a joint decision costs 2*beta_j) or once per query.
enum class BetaMode { per_head, per_query };

// One point of a finite input space: a feature vector with probability mass,
// a synthesized gold span, and each agent's raw per-head error probability
// D(prediction != gold | x). The alpha/beta shift is applied on demand.
struct WorldPoint {
  std::vector<double> features;
  double mass = 0.0;
  SpanPair gold;
  std::array<std::vector<double>, 2> err;  // [head][agent]
};

struct SyntheticWorld {
  std::vector<WorldPoint> points;
  CostParams costs;
  std::uint64_t seed = 0;
  int context_length = 32;

  int num_agents() const {
    return points.empty() ? 0 : static_cast<int>(points[0].err[0].size());
  }

  void validate() const {
    if (points.empty()) throw BadSpecError("world has no points");
    const int agents = num_agents();
    const std::size_t dim = points[0].features.size();
    double total_mass = 0.0;
    for (const WorldPoint& p : points) {
      if (p.features.size() != dim)
        throw InconsistentDimsError("world points disagree on feature dim");
      if (p.mass < 0.0) throw BadSpecError("point mass must be nonnegative");
      total_mass += p.mass;
      for (const auto& head_err : p.err) {
        if (static_cast<int>(head_err.size()) != agents)
          throw InconsistentDimsError("error table width must equal agent count");
        for (double e : head_err)
          if (e < 0.0 || e > 1.0)
            throw BadSpecError("error probabilities must lie in [0,1]");
      }
      if (p.gold.start < 0 || p.gold.end < 0 || p.gold.start >= context_length ||
          p.gold.end >= context_length)
        throw BadSpecError("world gold spans must lie inside the context");
    }
    if (std::abs(total_mass - 1.0) > 1e-12)
      throw BadSpecError("point masses must sum to 1");
    if (costs.num_agents() != agents)
      throw DimensionMismatchError("cost params and error tables disagree on agents");
  }
};

// Feature clusters with per-cluster agent competence. Membership for the
// error tables is decided by the nearest center, not the generating cluster.
struct ClusterSpec {
  int num_clusters = 2;
  int feature_dim = 2;
  std::vector<std::vector<double>> centers;
  double spread = 0.5;
  int points_per_cluster = 50;
  std::vector<std::vector<int>> expert_competent;  // cluster ids per expert
  double competent_err = 0.05;
  double outside_err = 0.6;
  std::vector<double> main_err;  // per cluster

  void validate() const {
    if (num_clusters < 1) throw BadSpecError("need at least one cluster");
    if (feature_dim < 1) throw BadSpecError("feature_dim must be >= 1");
    if (static_cast<int>(centers.size()) != num_clusters)
      throw BadSpecError("need one center per cluster");
    for (const auto& c : centers)
      if (static_cast<int>(c.size()) != feature_dim)
        throw BadSpecError("center dimension mismatch");
    if (spread < 0.0) throw BadSpecError("spread must be nonnegative");
    if (points_per_cluster < 1) throw BadSpecError("points_per_cluster must be >= 1");
    if (competent_err < 0.0 || competent_err > 1.0 || outside_err < 0.0 ||
        outside_err > 1.0)
      throw BadSpecError("error rates must lie in [0,1]");
    for (const auto& clusters : expert_competent)
      for (int c : clusters)
        if (c < 0 || c >= num_clusters)
          throw BadSpecError("competent set references an unknown cluster");
    if (static_cast<int>(main_err.size()) != num_clusters)
      throw BadSpecError("main_err needs one entry per cluster");
    for (double e : main_err)
      if (e < 0.0 || e > 1.0) throw BadSpecError("main_err must lie in [0,1]");
  }
};

namespace detail {

inline int nearest_center(const ClusterSpec& spec, const std::vector<double>& x) {
  int best = 0;
  double best_d2 = 0.0;
  for (int k = 0; k < spec.num_clusters; ++k) {
    double d2 = 0.0;
    for (int i = 0; i < spec.feature_dim; ++i) {
      const double dx = x[i] - spec.centers[k][i];
      d2 += dx * dx;
    }
    if (k == 0 || d2 < best_d2) {
      best = k;
      best_d2 = d2;
    }
  }
  return best;
}

}  // namespace detail

inline SyntheticWorld generate_world(const ClusterSpec& spec, const CostParams& costs,
                                     std::uint64_t seed) {
  spec.validate();
  validate_cost_params(costs, ValidationMode::permissive);
  if (static_cast<int>(spec.expert_competent.size()) != costs.num_experts())
    throw BadSpecError("competent sets and cost params disagree on expert count");

  SyntheticWorld world;
  world.costs = costs;
  world.seed = seed;
  Rng rng(seed);
  const int total = spec.num_clusters * spec.points_per_cluster;
  world.points.reserve(total);
  for (int k = 0; k < spec.num_clusters; ++k) {
    for (int p = 0; p < spec.points_per_cluster; ++p) {
      WorldPoint point;
      point.features.resize(spec.feature_dim);
      for (int i = 0; i < spec.feature_dim; ++i)
        point.features[i] = spec.centers[k][i] + spec.spread * rng.normal();
      const int member = detail::nearest_center(spec, point.features);
      const int idx = static_cast<int>(world.points.size());
      point.gold = SpanPair{idx % 16, idx % 16 + idx % 3};
      point.mass = 1.0 / total;
      for (auto& head_err : point.err) {
        head_err.resize(costs.num_agents());
        head_err[0] = spec.main_err[member];
        for (int j = 0; j < costs.num_experts(); ++j) {
          const auto& competent = spec.expert_competent[j];
          const bool in = std::find(competent.begin(), competent.end(), member) !=
                          competent.end();
          head_err[j + 1] = in ? spec.competent_err : spec.outside_err;
        }
      }
      world.points.push_back(std::move(point));
    }
  }
  world.validate();
  return world;
}

// A two-cluster stock world: the main model owns cluster 0, a light expert
// owns cluster 1, and a heavier expert is competent on the main model's turf.
inline ClusterSpec default_cluster_spec() {
  ClusterSpec spec;
  spec.num_clusters = 2;
  spec.feature_dim = 2;
  spec.centers = {{-2.0, 0.0}, {2.0, 0.0}};
  spec.spread = 0.5;
  spec.points_per_cluster = 100;
  spec.expert_competent = {{1}, {0}};
  spec.competent_err = 0.05;
  spec.outside_err = 0.6;
  spec.main_err = {0.1, 0.5};
  return spec;
}

// Strict-mode costs for the stock world; GFLOPs follow the usual
// general-model / light-specialist / heavy-specialist pattern.
inline CostParams default_world_costs() {
  CostParams p;
  p.alpha = {0.88, 0.88};
  p.beta = {0.04, 0.12};
  p.agent_gflops = {373.66, 32.68, 928.08};
  p.rejector_gflops = 0.15;
  return p;
}

// Realizes the world's error probabilities as concrete records: correct heads
// copy the gold span, incorrect heads emit the deterministic wrong component
// (gold + 1, wrapped at the context length).
inline std::vector<AgentPredictionRecord> sample_log(const SyntheticWorld& world, int n,
                                                     std::uint64_t seed) {
  if (n < 1) throw BadSpecError("need at least one sample");
  world.validate();
  std::vector<double> cumulative(world.points.size());
  double acc = 0.0;
  for (std::size_t p = 0; p < world.points.size(); ++p) {
    acc += world.points[p].mass;
    cumulative[p] = acc;
  }
  Rng rng(seed);
  std::vector<AgentPredictionRecord> log;
  log.reserve(n);
  const int agents = world.num_agents();
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const std::size_t p =
        std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
    const WorldPoint& point = world.points[std::min(p, world.points.size() - 1)];
    AgentPredictionRecord rec;
    char id[16];
    std::snprintf(id, sizeof id, "q%08d", i);
    rec.query_id = id;
    rec.features = point.features;
    rec.gold = point.gold;
    rec.predictions.resize(agents);
    for (int j = 0; j < agents; ++j) {
      int comp[2];
      for (int h = 0; h < 2; ++h) {
        const int gold = h == 0 ? point.gold.start : point.gold.end;
        const bool wrong = rng.bernoulli(point.err[h][j]);
        comp[h] = wrong ? (gold + 1) % world.context_length : gold;
      }
      rec.predictions[j] = SpanPair{comp[0], comp[1]};
    }
    log.push_back(std::move(rec));
  }
  return log;
}

// eta_0 = err_0, eta_j = alpha_j * err_j + beta_j.
inline std::vector<double> eta_row(const std::vector<double>& raw_err,
                                   const CostParams& params) {
  if (static_cast<int>(raw_err.size()) != params.num_agents())
    throw DimensionMismatchError("error row width must equal agent count");
  std::vector<double> eta(raw_err.size());
  eta[0] = raw_err[0];
  for (int j = 1; j < params.num_agents(); ++j)
    eta[j] = params.alpha[j - 1] * raw_err[j] + params.beta[j - 1];
  return eta;
}

// Pointwise Bayes rejector: keep the main model when eta_0 <= min_j eta_j,
// otherwise pick the least inaccurate expert (ties to the lowest index).
inline AgentId bayes_decide(const std::vector<double>& raw_err, const CostParams& params) {
  const std::vector<double> eta = eta_row(raw_err, params);
  double best_expert = eta[1];
  int best_idx = 1;
  for (int j = 2; j < params.num_agents(); ++j) {
    if (eta[j] < best_expert) {
      best_expert = eta[j];
      best_idx = j;
    }
  }
  return eta[0] <= best_expert ? AgentId{0} : AgentId{best_idx};
}

// Independent route to the same optimum: enumerate every conditional risk and
// take the flat argmin.
inline std::pair<AgentId, double> brute_force_conditional_min(
    const std::vector<double>& raw_err, const CostParams& params) {
  const std::vector<double> eta = eta_row(raw_err, params);
  int best = 0;
  for (int j = 1; j < static_cast<int>(eta.size()); ++j)
    if (eta[j] < eta[best]) best = j;
  return {AgentId{best}, eta[best]};
}

namespace detail {

inline double joint_eta_sum(const WorldPoint& point, int agent, const CostParams& params,
                            BetaMode beta_mode) {
  double total = 0.0;
  for (int h = 0; h < 2; ++h) {
    const double raw = point.err[h][agent];
    total += agent == 0 ? raw : params.alpha[agent - 1] * raw;
  }
  if (agent > 0)
    total += (beta_mode == BetaMode::per_head ? 2.0 : 1.0) * params.beta[agent - 1];
  return total;
}

}  // namespace detail

// Mass-weighted optimal risk. Per-head mode optimizes each head separately;
// joint mode must pick one agent per point.
inline double bayes_risk(const SyntheticWorld& world, const CostParams& params,
                         AllocationMode mode, BetaMode beta_mode = BetaMode::per_head) {
  world.validate();
  double risk = 0.0;
  for (const WorldPoint& point : world.points) {
    if (mode == AllocationMode::per_head) {
      for (int h = 0; h < 2; ++h) {
        const std::vector<double> eta = eta_row(point.err[h], params);
        risk += point.mass * *std::min_element(eta.begin(), eta.end());
      }
    } else {
      double best = detail::joint_eta_sum(point, 0, params, beta_mode);
      for (int j = 1; j < world.num_agents(); ++j)
        best = std::min(best, detail::joint_eta_sum(point, j, params, beta_mode));
      risk += point.mass * best;
    }
  }
  return risk;
}

// Mass fraction of queries the Bayes rule sends to each agent. Per-head mode
// counts each head's decision with weight 1/2.
inline std::vector<double> bayes_allocation(const SyntheticWorld& world,
                                            const CostParams& params, AllocationMode mode,
                                            BetaMode beta_mode = BetaMode::per_head) {
  world.validate();
  std::vector<double> alloc(world.num_agents(), 0.0);
  for (const WorldPoint& point : world.points) {
    if (mode == AllocationMode::per_head) {
      for (int h = 0; h < 2; ++h)
        alloc[bayes_decide(point.err[h], params).value] += 0.5 * point.mass;
    } else {
      int best = 0;
      double best_sum = detail::joint_eta_sum(point, 0, params, beta_mode);
      for (int j = 1; j < world.num_agents(); ++j) {
        const double s = detail::joint_eta_sum(point, j, params, beta_mode);
        if (s < best_sum) {
          best_sum = s;
          best = j;
        }
      }
      alloc[best] += point.mass;
    }
  }
  return alloc;
}

// Exact expected deferral risk of a trained rejector on a world.
inline double empirical_deferral_risk(const RejectorModel& model,
                                      const SyntheticWorld& world, const CostParams& params,
                                      AllocationMode mode,
                                      BetaMode beta_mode = BetaMode::per_head) {
  world.validate();
  double risk = 0.0;
  for (const WorldPoint& point : world.points) {
    const auto [rs, re] = score(model, point.features);
    if (mode == AllocationMode::per_head) {
      const int ds = decide_per_head(rs).value;
      const int de = decide_per_head(re).value;
      const std::vector<double> eta_s = eta_row(point.err[0], params);
      const std::vector<double> eta_e = eta_row(point.err[1], params);
      risk += point.mass * (eta_s[ds] + eta_e[de]);
    } else {
      const int d = decide_joint(rs, re).value;
      risk += point.mass * detail::joint_eta_sum(point, d, params, beta_mode);
    }
  }
  return risk;
}

// Empirical mean of the true deferral loss over a concrete log.
inline double empirical_deferral_risk(const RejectorModel& model,
                                      const std::vector<AgentPredictionRecord>& log,
                                      const CostParams& params, AllocationMode mode,
                                      BetaMode beta_mode = BetaMode::per_head) {
  if (log.empty()) throw EmptyLogError("risk evaluation needs a nonempty log");
  double total = 0.0;
  for (const AgentPredictionRecord& rec : log) {
    const Allocation a = allocate(model, rec, mode);
    double loss = true_deferral_loss(a.start_agent, a.end_agent, rec, params);
    if (mode == AllocationMode::joint && beta_mode == BetaMode::per_query &&
        a.start_agent.value > 0)
      loss -= params.beta[a.start_agent.value - 1];
    total += loss;
  }
  return total / static_cast<double>(log.size());
}

// ---------------------------------------------------------------------------
// Consistency transform T^nu and its inverse Gamma^nu.
// ---------------------------------------------------------------------------

// Piecewise transform, one branch per nu regime. n is the number of
// allocation classes (J+1) and only enters the nu > 1 branches.
inline double gamma_transform(double u, double nu, int n) {
  if (u < 0.0 || u > 1.0) throw DomainErrorL2d("transform argument must lie in [0,1]");
  if (nu < 0.0) throw DomainErrorL2d("nu must be nonnegative");
  if (n < 2) throw BadDimensionError("need at least two allocation classes");
  if (nu == 1.0) {
    const auto half_entropy_term = [](double v) {
      return v == 0.0 ? 0.0 : 0.5 * v * std::log(v);
    };
    return half_entropy_term(1.0 + u) + half_entropy_term(1.0 - u);
  }
  if (nu >= 2.0) return u / ((nu - 1.0) * std::pow(static_cast<double>(n), nu - 1.0));
  // power mean ((1+u)^q + (1-u)^q)/2 with q = 1/(2-nu), raised back to 1/q;
  // done in log space since q blows up as nu approaches 2
  const double q = 1.0 / (2.0 - nu);
  const double log_hi = q * std::log1p(u);
  const double log_lo = u >= 1.0 ? -std::numeric_limits<double>::infinity()
                                 : q * std::log1p(-u);
  const double log_mean = log_hi + std::log1p(std::exp(log_lo - log_hi)) - std::log(2.0);
  const double core = std::exp((2.0 - nu) * log_mean);
  if (nu < 1.0) return std::pow(2.0, 1.0 - nu) / (1.0 - nu) * (1.0 - core);
  return (core - 1.0) / ((nu - 1.0) * std::pow(static_cast<double>(n), nu - 1.0));
}

// Inverse of T^nu by bisection on [0,1]; T^nu is non-decreasing there.
inline double gamma_inverse(double t, double nu, int n, double tol) {
  if (tol <= 0.0) throw DomainErrorL2d("tolerance must be positive");
  const double t_max = gamma_transform(1.0, nu, n);
  if (t > t_max + tol || t < -tol)
    throw OutOfRangeError("target " + std::to_string(t) + " outside [0, T(1)=" +
                          std::to_string(t_max) + "]");
  if (t <= 0.0) return 0.0;
  if (t >= t_max) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  double mid = 0.5;
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    const double v = gamma_transform(mid, nu, n);
    if (std::abs(v - t) <= tol) return mid;
    if (v < t)
      lo = mid;
    else
      hi = mid;
  }
  return mid;
}

// ---------------------------------------------------------------------------
// Theorem-level bound check on a finite world.
// ---------------------------------------------------------------------------

namespace detail {

// Pointwise infimum over all score vectors of sum_j tau_j * Phi_01^nu(., j),
// for nonnegative weights tau. Closed forms per nu regime.
inline double weighted_surrogate_inf(const std::vector<double>& tau, double nu) {
  double norm = 0.0;
  double max_tau = 0.0;
  for (double t : tau) {
    norm += t;
    max_tau = std::max(max_tau, t);
  }
  if (norm == 0.0) return 0.0;
  if (std::abs(nu - 1.0) < 1e-9) {
    double inf = 0.0;
    for (double t : tau)
      if (t > 0.0) inf -= t * std::log(t / norm);
    return inf;
  }
  if (nu >= 2.0) return (norm - max_tau) / (nu - 1.0);
  const double q = 1.0 / (2.0 - nu);
  double z = 0.0;
  for (double t : tau) z += std::pow(t, q);
  return (std::pow(z, 2.0 - nu) - norm) / (1.0 - nu);
}

}  // namespace detail

struct BoundReport {
  double true_excess = 0.0;       // E[deferral risk of the model] - Bayes risk
  double surrogate_excess = 0.0;  // E[surrogate risk] - pointwise-optimal risk
  double bound_value = 0.0;       // E[ S(x) * Gamma^nu(gap(x) / S(x)) ]
  double min_pointwise_margin = 0.0;
  bool holds = false;
};

// Evaluates both sides of the consistency inequality exactly on a finite
// world: the per-head decision rule's true excess risk on the left, and the
// Gamma-transformed surrogate excess (normalized by the expected cost vector's
// L1 norm, per head) on the right. The main model is fixed, so its own excess
// term vanishes; all-functions minimizability gaps are zero on finite worlds.
inline BoundReport bound_check(const SyntheticWorld& world, const RejectorModel& model,
                               const CostParams& params, double nu) {
  world.validate();
  if (validate_cost_params(params, ValidationMode::permissive).tau_out_of_range_warning)
    throw NonNegativeTauViolatedError(
        "alpha_j + beta_j > 1 makes the expected cost vector negative somewhere; "
        "the bound needs strict-mode costs");
  const int agents = world.num_agents();
  if (model.num_agents != agents)
    throw DimensionMismatchError("model and world disagree on the agent count");
  const SurrogateSpec spec(nu, agents);
  const double t_max = gamma_transform(1.0, spec.nu, agents);

  BoundReport report;
  report.min_pointwise_margin = std::numeric_limits<double>::infinity();
  for (const WorldPoint& point : world.points) {
    const auto [rs, re] = score(model, point.features);
    double point_true_gap = 0.0;
    double point_surr_gap = 0.0;
    double tau_norm_sum = 0.0;
    for (int h = 0; h < 2; ++h) {
      const std::vector<double> eta = eta_row(point.err[h], params);
      std::vector<double> tau(eta.size());
      for (std::size_t j = 0; j < eta.size(); ++j) {
        tau[j] = 1.0 - eta[j];
        if (tau[j] < -1e-12)
          throw NonNegativeTauViolatedError(
              "expected cost vector has a negative entry; use strict-mode costs");
        tau[j] = std::max(tau[j], 0.0);
      }
      const std::span<const double> rbar = h == 0 ? rs : re;
      const int decision = decide_per_head(rbar).value;
      point_true_gap += eta[decision] - *std::min_element(eta.begin(), eta.end());

      double cond_risk = 0.0;
      for (int j = 0; j < agents; ++j)
        if (tau[j] > 0.0) cond_risk += tau[j] * comp_sum_surrogate(rbar, j, spec);
      const double gap = cond_risk - detail::weighted_surrogate_inf(tau, spec.nu);
      point_surr_gap += std::max(gap, 0.0);
      for (double t : tau) tau_norm_sum += t;
    }
    double point_bound = 0.0;
    if (tau_norm_sum > 0.0) {
      const double normalized = point_surr_gap / tau_norm_sum;
      const double gamma =
          normalized >= t_max ? 1.0 : gamma_inverse(normalized, spec.nu, agents, 1e-14);
      point_bound = tau_norm_sum * gamma;
    }
    report.true_excess += point.mass * point_true_gap;
    report.surrogate_excess += point.mass * point_surr_gap;
    report.bound_value += point.mass * point_bound;
    report.min_pointwise_margin =
        std::min(report.min_pointwise_margin, point_bound - point_true_gap);
  }
  report.holds = report.true_excess <= report.bound_value + 1e-9;
  return report;
}

}  // namespace l2d

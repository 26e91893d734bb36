#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "l2d/errors.hpp"

namespace l2d {

enum class Head { start = 0, end = 1 };

// Token-index answer span. (-1, -1) is the reserved "no answer" sentinel;
// no other negative component is legal.
struct SpanPair {
  int start = -1;
  int end = -1;

  bool operator==(const SpanPair&) const = default;

  int component(Head h) const { return h == Head::start ? start : end; }

  bool is_no_answer() const { return start == -1 && end == -1; }

  void validate() const {
    if (start < -1 || end < -1)
      throw DomainErrorL2d("span components must be >= -1");
    if ((start == -1) != (end == -1))
      throw DomainErrorL2d("-1 is only legal as the (-1,-1) no-answer pair");
  }
};

// Agent 0 is the main model; 1..J are experts.
struct AgentId {
  int value = 0;

  bool operator==(const AgentId&) const = default;

  bool is_main_model() const { return value == 0; }
};

// One query: its gold span, precomputed features, and every agent's
// prediction (position j holds agent j's output).
struct AgentPredictionRecord {
  std::string query_id;
  std::vector<double> features;
  SpanPair gold;
  std::vector<SpanPair> predictions;

  int num_agents() const { return static_cast<int>(predictions.size()); }

  void validate(int expected_agents, int expected_dim) const {
    if (num_agents() != expected_agents)
      throw InconsistentDimsError("record " + query_id + " has " +
                                  std::to_string(num_agents()) +
                                  " predictions, expected " +
                                  std::to_string(expected_agents));
    if (static_cast<int>(features.size()) != expected_dim)
      throw InconsistentDimsError("record " + query_id + " has " +
                                  std::to_string(features.size()) +
                                  " features, expected " +
                                  std::to_string(expected_dim));
    for (double f : features)
      if (!std::isfinite(f))
        throw InconsistentDimsError("record " + query_id +
                                    " has a non-finite feature");
    gold.validate();
    for (const SpanPair& p : predictions) p.validate();
  }
};

enum class ValidationMode { strict, permissive };

// Per-expert misclassification weight alpha_j and consultation cost beta_j,
// plus per-agent GFLOPs used only by the efficiency metrics.
struct CostParams {
  std::vector<double> alpha;         // size J
  std::vector<double> beta;          // size J
  std::vector<double> agent_gflops;  // size J+1, entry 0 = main model
  double rejector_gflops = 0.0;
  // Set by validate_cost_params in permissive mode when some alpha+beta > 1
  // (tau_j = 1 - c_j can then go negative).
  bool tau_out_of_range_warning = false;

  int num_experts() const { return static_cast<int>(alpha.size()); }
  int num_agents() const { return num_experts() + 1; }
};

inline CostParams validate_cost_params(CostParams params, ValidationMode mode) {
  if (params.beta.size() != params.alpha.size())
    throw DimensionMismatchError("alpha and beta must have one entry per expert");
  params.tau_out_of_range_warning = false;
  for (int j = 0; j < params.num_experts(); ++j) {
    const double a = params.alpha[j];
    const double b = params.beta[j];
    if (a < 0.0 || b < 0.0)
      throw NegativeCostError("expert " + std::to_string(j + 1) +
                              ": alpha and beta must be nonnegative");
    if (a + b > 1.0) {
      if (mode == ValidationMode::strict)
        throw TauOutOfRangeError("expert " + std::to_string(j + 1) + ": alpha+beta = " +
                                 std::to_string(a + b) +
                                 " > 1 leaves the tau weight outside [0,1]");
      params.tau_out_of_range_warning = true;
    }
  }
  for (double g : params.agent_gflops)
    if (g < 0.0) throw NegativeCostError("agent gflops must be nonnegative");
  if (params.rejector_gflops < 0.0)
    throw NegativeCostError("rejector gflops must be nonnegative");
  return params;
}

// Cost of letting agent j answer one head: c_0 = 1{pred != gold},
// c_{j>0} = alpha_j 1{pred != gold} + beta_j.
inline double agent_cost(AgentId j, int predicted, int gold,
                         const CostParams& params) {
  const double miss = (predicted != gold) ? 1.0 : 0.0;
  if (j.is_main_model()) return miss;
  const int e = j.value - 1;
  if (e < 0 || e >= params.num_experts())
    throw DimensionMismatchError("agent index " + std::to_string(j.value) +
                                 " outside the configured agent set");
  return params.alpha[e] * miss + params.beta[e];
}

// The J+1 head costs (c_0, c_1, ..., c_J); entry 0 is always 0 or 1.
struct CostVector {
  std::vector<double> values;

  int num_agents() const { return static_cast<int>(values.size()); }
};

inline CostVector cost_vector(const AgentPredictionRecord& record, Head head,
                              const CostParams& params) {
  if (record.num_agents() != params.num_agents())
    throw DimensionMismatchError("record has " + std::to_string(record.num_agents()) +
                                 " agents, cost params expect " +
                                 std::to_string(params.num_agents()));
  CostVector out;
  out.values.resize(record.predictions.size());
  const int gold = record.gold.component(head);
  for (int j = 0; j < record.num_agents(); ++j)
    out.values[j] =
        agent_cost(AgentId{j}, record.predictions[j].component(head), gold, params);
  return out;
}

// tau_j = 1 - c_j elementwise.
inline std::vector<double> tau_weights(const CostVector& costs) {
  std::vector<double> tau(costs.values.size());
  for (std::size_t j = 0; j < tau.size(); ++j) tau[j] = 1.0 - costs.values[j];
  return tau;
}

// L1-normalize a nonnegative vector onto the probability simplex.
inline std::vector<double> normalize_cost_vector(const std::vector<double>& tau_bar) {
  double norm = 0.0;
  for (double t : tau_bar) {
    if (t < 0.0) throw NegativeEntryError("simplex normalization needs nonnegative entries");
    norm += t;
  }
  if (norm == 0.0) throw ZeroVectorError("cannot normalize the zero vector");
  std::vector<double> p(tau_bar.size());
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = tau_bar[j] / norm;
  return p;
}

}  // namespace l2d

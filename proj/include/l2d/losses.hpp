#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"

namespace l2d {

// The comp-sum surrogate family: nu = 1 is log-softmax, nu = 2 is MAE.
// Values within 1e-9 of 1 are snapped to exactly 1.
struct SurrogateSpec {
  double nu = 1.0;
  int num_classes = 2;

  SurrogateSpec() = default;
  SurrogateSpec(double nu_, int num_classes_) : nu(nu_), num_classes(num_classes_) {
    if (nu < 0.0) throw DomainErrorL2d("nu must be nonnegative");
    if (num_classes < 2) throw BadDimensionError("need at least 2 classes");
    if (std::abs(nu - 1.0) < 1e-9) nu = 1.0;
  }

  bool is_log_softmax() const { return nu == 1.0; }
};

namespace detail {

// log(sum_j exp(scores[j] - scores[target])), computed against the score max
// so nothing overflows for |scores| <= 700.
inline double log_psi(std::span<const double> scores, int target) {
  double max_score = scores[0];
  for (double s : scores) max_score = std::max(max_score, s);
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - max_score);
  return (max_score - scores[target]) + std::log(sum);
}

inline void softmax_into(std::span<const double> scores, std::vector<double>& out) {
  double max_score = scores[0];
  for (double s : scores) max_score = std::max(max_score, s);
  double sum = 0.0;
  out.resize(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    out[j] = std::exp(scores[j] - max_score);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
}

}  // namespace detail

// Phi_01^nu(scores, target): log(Psi) at nu = 1, (Psi^(1-nu) - 1)/(1-nu)
// otherwise, with Psi = sum_j exp(scores[j] - scores[target]).
inline double comp_sum_surrogate(std::span<const double> scores, int target,
                                 const SurrogateSpec& spec) {
  if (target < 0 || target >= static_cast<int>(scores.size()))
    throw DimensionMismatchError("surrogate target outside score range");
  const double lp = detail::log_psi(scores, target);
  if (spec.is_log_softmax()) return lp;
  return std::expm1((1.0 - spec.nu) * lp) / (1.0 - spec.nu);
}

// d Phi_01^nu / d scores. For nu = 1 this is softmax(scores) minus the
// one-hot of target; the general case scales that by Psi^(1-nu).
inline std::vector<double> comp_sum_gradient(std::span<const double> scores, int target,
                                             const SurrogateSpec& spec) {
  if (target < 0 || target >= static_cast<int>(scores.size()))
    throw DimensionMismatchError("surrogate target outside score range");
  std::vector<double> grad;
  detail::softmax_into(scores, grad);
  double scale = 1.0;
  if (!spec.is_log_softmax()) {
    const double lp = detail::log_psi(scores, target);
    scale = std::exp((1.0 - spec.nu) * lp);
  }
  for (std::size_t j = 0; j < grad.size(); ++j) {
    const double onehot = (static_cast<int>(j) == target) ? 1.0 : 0.0;
    grad[j] = scale * (grad[j] - onehot);
  }
  return grad;
}

// Definition-level deferral loss: the chosen agents' head costs, summed over
// the start and end heads.
inline double true_deferral_loss(AgentId decision_start, AgentId decision_end,
                                 const AgentPredictionRecord& record,
                                 const CostParams& params) {
  double total = 0.0;
  const AgentId decisions[2] = {decision_start, decision_end};
  for (Head h : {Head::start, Head::end}) {
    const AgentId d = decisions[static_cast<int>(h)];
    if (d.value < 0 || d.value >= record.num_agents())
      throw DimensionMismatchError("decision outside the agent set");
    total += agent_cost(d, record.predictions[d.value].component(h),
                        record.gold.component(h), params);
  }
  return total;
}

// Surrogate deferral loss: sum over heads of sum_j tau_j * Phi_01^nu(rbar, j),
// with tau_j = 1 - c_j taken from the record's realized costs on that head.
inline double surrogate_deferral_loss(std::span<const double> rbar_start,
                                      std::span<const double> rbar_end,
                                      const AgentPredictionRecord& record,
                                      const CostParams& params,
                                      const SurrogateSpec& spec) {
  if (spec.num_classes != record.num_agents() ||
      static_cast<int>(rbar_start.size()) != spec.num_classes ||
      static_cast<int>(rbar_end.size()) != spec.num_classes)
    throw DimensionMismatchError("score vectors must have one entry per agent");
  double total = 0.0;
  for (Head h : {Head::start, Head::end}) {
    const std::span<const double> rbar = (h == Head::start) ? rbar_start : rbar_end;
    const std::vector<double> tau = tau_weights(cost_vector(record, h, params));
    for (int j = 0; j < spec.num_classes; ++j) {
      if (tau[j] == 0.0) continue;
      total += tau[j] * comp_sum_surrogate(rbar, j, spec);
    }
  }
  return total;
}

// Per-head gradients of the surrogate deferral loss with respect to the two
// score vectors. The heads do not interact.
inline std::pair<std::vector<double>, std::vector<double>> surrogate_deferral_gradient(
    std::span<const double> rbar_start, std::span<const double> rbar_end,
    const AgentPredictionRecord& record, const CostParams& params,
    const SurrogateSpec& spec) {
  if (spec.num_classes != record.num_agents() ||
      static_cast<int>(rbar_start.size()) != spec.num_classes ||
      static_cast<int>(rbar_end.size()) != spec.num_classes)
    throw DimensionMismatchError("score vectors must have one entry per agent");
  std::pair<std::vector<double>, std::vector<double>> out;
  for (Head h : {Head::start, Head::end}) {
    const std::span<const double> rbar = (h == Head::start) ? rbar_start : rbar_end;
    std::vector<double>& grad = (h == Head::start) ? out.first : out.second;
    grad.assign(spec.num_classes, 0.0);
    const std::vector<double> tau = tau_weights(cost_vector(record, h, params));
    for (int j = 0; j < spec.num_classes; ++j) {
      if (tau[j] == 0.0) continue;
      const std::vector<double> g = comp_sum_gradient(rbar, j, spec);
      for (int k = 0; k < spec.num_classes; ++k) grad[k] += tau[j] * g[k];
    }
  }
  return out;
}

}  // namespace l2d

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/rejector.hpp"
#include "l2d/training.hpp"

namespace l2d {

inline int exact_match(const SpanPair& pred, const SpanPair& gold) {
  return pred == gold ? 1 : 0;
}

struct TprFpr {
  double tpr = 0.0;
  double fpr = 0.0;
  bool tpr_denominator_zero = false;
  bool fpr_denominator_zero = false;
};

struct MetricsReport {
  double em_percent = 0.0;
  std::vector<double> allocation;  // fraction per agent, sums to 1
  double expert_allocation_percent = 0.0;
  std::array<double, 8> confusion{};  // averaged t1..t8, when computed
  bool has_confusion = false;
  TprFpr rates;
  bool has_rates = false;
  double mean_gflops_per_query = 0.0;
  double gflops_per_em = 0.0;
  std::vector<double> beta;
};

// mean GFLOPs per query divided by the EM percentage; +inf marks EM = 0.
inline double gflops_per_em(double mean_gflops_per_query, double em_percent) {
  if (em_percent <= 0.0) return std::numeric_limits<double>::infinity();
  return mean_gflops_per_query / em_percent;
}

struct EvalOptions {
  AllocationMode mode = AllocationMode::joint;
  std::optional<int> force_agent;  // route every query to this agent
  int num_threads = 1;
};

namespace detail {

// Per-chunk tallies, all integer: allocation in half-units so per-head mode
// stays exact, and GFLOPs as per-agent charge counts so the endpoint identity
// mean = rejector_gflops + gflops_k holds exactly when every query goes to k.
struct EvalChunk {
  std::int64_t em_count = 0;
  std::vector<std::int64_t> alloc_halves;
  std::vector<std::int64_t> charges;
};

inline constexpr std::size_t kEvalChunkSize = 1024;

inline void eval_records(const std::vector<AgentPredictionRecord>& log, std::size_t begin,
                         std::size_t end, const RejectorModel& model,
                         const CostParams& params, const EvalOptions& opts,
                         EvalChunk& chunk) {
  chunk.alloc_halves.assign(params.num_agents(), 0);
  chunk.charges.assign(params.num_agents(), 0);
  for (std::size_t i = begin; i < end; ++i) {
    const AgentPredictionRecord& rec = log[i];
    Allocation a;
    if (opts.force_agent) {
      const int k = *opts.force_agent;
      a.start_agent = a.end_agent = AgentId{k};
      a.span = rec.predictions[k];
    } else {
      a = allocate(model, rec, opts.mode);
    }
    chunk.em_count += exact_match(a.span, rec.gold);
    chunk.alloc_halves[a.start_agent.value] += 1;
    chunk.alloc_halves[a.end_agent.value] += 1;
    chunk.charges[a.start_agent.value] += 1;
    if (a.end_agent != a.start_agent) chunk.charges[a.end_agent.value] += 1;
  }
}

}  // namespace detail

// Routes every record through the rejector (or a forced agent), scores exact
// match on the chosen spans, and tallies allocation fractions and compute.
// Parallel runs produce reports identical to serial runs.
inline MetricsReport evaluate_system(const std::vector<AgentPredictionRecord>& log,
                                     const RejectorModel& model, const CostParams& params,
                                     const EvalOptions& opts = {}) {
  if (log.empty()) throw EmptyLogError("evaluation needs a nonempty log");
  if (params.num_agents() != model.num_agents)
    throw DimensionMismatchError("cost params and model disagree on the agent count");
  if (opts.force_agent && (*opts.force_agent < 0 || *opts.force_agent >= model.num_agents))
    throw DimensionMismatchError("forced agent outside the agent set");
  for (const auto& rec : log) rec.validate(model.num_agents, model.input_dim);

  const std::size_t n = log.size();
  const std::size_t n_chunks = (n + detail::kEvalChunkSize - 1) / detail::kEvalChunkSize;
  std::vector<detail::EvalChunk> chunks(n_chunks);
  const auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * detail::kEvalChunkSize;
    const std::size_t end = std::min(begin + detail::kEvalChunkSize, n);
    detail::eval_records(log, begin, end, model, params, opts, chunks[c]);
  };
  const int threads = std::max(1, opts.num_threads);
  if (threads == 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < n_chunks; c += threads) run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  std::int64_t em = 0;
  std::vector<std::int64_t> halves(params.num_agents(), 0);
  std::vector<std::int64_t> charges(params.num_agents(), 0);
  for (const auto& chunk : chunks) {
    em += chunk.em_count;
    for (std::size_t j = 0; j < halves.size(); ++j) {
      halves[j] += chunk.alloc_halves[j];
      charges[j] += chunk.charges[j];
    }
  }

  MetricsReport report;
  report.em_percent = 100.0 * static_cast<double>(em) / static_cast<double>(n);
  report.allocation.resize(params.num_agents());
  for (std::size_t j = 0; j < halves.size(); ++j)
    report.allocation[j] = static_cast<double>(halves[j]) / (2.0 * static_cast<double>(n));
  report.expert_allocation_percent = 100.0 * (1.0 - report.allocation[0]);
  report.mean_gflops_per_query = params.rejector_gflops;
  for (std::size_t j = 0; j < charges.size(); ++j)
    report.mean_gflops_per_query += static_cast<double>(charges[j]) /
                                    static_cast<double>(n) * params.agent_gflops[j];
  report.gflops_per_em = gflops_per_em(report.mean_gflops_per_query, report.em_percent);
  report.beta = params.beta;
  return report;
}

inline double standalone_em_percent(const std::vector<AgentPredictionRecord>& log,
                                    int agent) {
  if (log.empty()) throw EmptyLogError("evaluation needs a nonempty log");
  std::int64_t em = 0;
  for (const auto& rec : log) {
    if (agent < 0 || agent >= rec.num_agents())
      throw DimensionMismatchError("agent outside the log's agent set");
    em += exact_match(rec.predictions[agent], rec.gold);
  }
  return 100.0 * static_cast<double>(em) / static_cast<double>(log.size());
}

struct ConfusionMatrix {
  std::array<double, 8> start{};
  std::array<double, 8> end{};
  std::array<double, 8> mean{};
};

// Buckets each head's outcomes by {kept vs deferred} x {predictor correct} x
// {expert-of-interest correct}: t1..t4 kept, t5..t8 deferred.
inline ConfusionMatrix confusion_matrix(const std::vector<AgentPredictionRecord>& log,
                                        const RejectorModel& model, int expert_of_interest) {
  if (log.empty()) throw EmptyLogError("confusion matrix needs a nonempty log");
  if (expert_of_interest < 1 || expert_of_interest >= model.num_agents)
    throw DimensionMismatchError("expert_of_interest must name an expert");
  ConfusionMatrix cm;
  for (const auto& rec : log) {
    rec.validate(model.num_agents, model.input_dim);
    const auto [rs, re] = score(model, rec.features);
    for (int h = 0; h < 2; ++h) {
      const Head head = h == 0 ? Head::start : Head::end;
      const int decision = decide_per_head(h == 0 ? rs : re).value;
      const int gold = rec.gold.component(head);
      const bool predictor_ok = rec.predictions[0].component(head) == gold;
      const bool expert_ok = rec.predictions[expert_of_interest].component(head) == gold;
      const int bucket = (decision == 0 ? 0 : 4) + (predictor_ok ? 0 : 2) + (expert_ok ? 0 : 1);
      (h == 0 ? cm.start : cm.end)[bucket] += 1.0;
    }
  }
  const double n = static_cast<double>(log.size());
  for (int b = 0; b < 8; ++b) {
    cm.start[b] /= n;
    cm.end[b] /= n;
    cm.mean[b] = 0.5 * (cm.start[b] + cm.end[b]);
  }
  return cm;
}

// TP: the main model would miss the query (joint EM 0), the rejector defers,
// and the chosen expert answers it. FP: deferred, expert wrong, main model
// right. Rates are conditioned on the main-model-wrong / -right counts.
inline TprFpr tpr_fpr(const std::vector<AgentPredictionRecord>& log,
                      const RejectorModel& model) {
  if (log.empty()) throw EmptyLogError("tpr/fpr needs a nonempty log");
  std::int64_t tp = 0, fp = 0, model_wrong = 0, model_right = 0;
  for (const auto& rec : log) {
    rec.validate(model.num_agents, model.input_dim);
    const Allocation a = allocate(model, rec, AllocationMode::joint);
    const bool main_ok = exact_match(rec.predictions[0], rec.gold) == 1;
    (main_ok ? model_right : model_wrong) += 1;
    if (a.start_agent.value == 0) continue;
    const bool expert_ok = exact_match(a.span, rec.gold) == 1;
    if (!main_ok && expert_ok) ++tp;
    if (main_ok && !expert_ok) ++fp;
  }
  TprFpr out;
  out.tpr_denominator_zero = model_wrong == 0;
  out.fpr_denominator_zero = model_right == 0;
  out.tpr = out.tpr_denominator_zero ? 0.0 : static_cast<double>(tp) / model_wrong;
  out.fpr = out.fpr_denominator_zero ? 0.0 : static_cast<double>(fp) / model_right;
  return out;
}

// Majority vote over all agents, per head. Ties prefer the main model's
// component, then the tied value proposed by the lowest agent index. The
// ensemble queries every agent, so it pays the full GFLOPs sum per query.
inline MetricsReport ensemble_baseline(const std::vector<AgentPredictionRecord>& log,
                                       const CostParams& params) {
  if (log.empty()) throw EmptyLogError("ensemble needs a nonempty log");
  std::int64_t em = 0;
  for (const auto& rec : log) {
    if (rec.num_agents() != params.num_agents())
      throw DimensionMismatchError("record and cost params disagree on agents");
    SpanPair voted;
    for (Head head : {Head::start, Head::end}) {
      std::map<int, int> votes;
      for (const SpanPair& p : rec.predictions) ++votes[p.component(head)];
      int best_count = 0;
      for (const auto& [value, count] : votes) best_count = std::max(best_count, count);
      int winner = 0;
      const int main_value = rec.predictions[0].component(head);
      if (votes[main_value] == best_count) {
        winner = main_value;
      } else {
        for (const SpanPair& p : rec.predictions)
          if (votes[p.component(head)] == best_count) {
            winner = p.component(head);
            break;
          }
      }
      (head == Head::start ? voted.start : voted.end) = winner;
    }
    em += exact_match(voted, rec.gold);
  }
  MetricsReport report;
  report.em_percent = 100.0 * static_cast<double>(em) / static_cast<double>(log.size());
  double total_gflops = 0.0;
  for (double g : params.agent_gflops) total_gflops += g;
  report.mean_gflops_per_query = total_gflops;
  report.gflops_per_em = gflops_per_em(total_gflops, report.em_percent);
  report.expert_allocation_percent = 100.0;
  report.beta = params.beta;
  return report;
}

struct CurveRow {
  double beta1 = 0.0;
  double em = 0.0;
  double expert_alloc = 0.0;
  std::vector<double> allocation;
  double gflops_per_em = 0.0;
  bool failed = false;
};

// Sweeps the cost-to-ask grid: expert 1 pays beta1 directly, experts j > 1
// are scaled by their GFLOPs ratio R_j = gflops_j / (divisor * gflops_1). A
// fresh rejector is trained per grid point; failures mark the row and the
// sweep continues.
inline std::vector<CurveRow> beta_sweep(
    const std::vector<AgentPredictionRecord>& log,
    const std::function<RejectorModel()>& model_factory, const CostParams& params_base,
    const std::vector<double>& beta1_grid, const TrainConfig& train_config,
    const EvalOptions& eval_opts = {}, double cost_ratio_divisor = 20.0) {
  if (beta1_grid.empty()) throw BadSpecError("beta grid must be nonempty");
  for (std::size_t i = 1; i < beta1_grid.size(); ++i)
    if (beta1_grid[i] < beta1_grid[i - 1])
      throw BadSpecError("beta grid must be ascending");
  if (params_base.num_experts() < 1) throw BadSpecError("need at least one expert");

  std::vector<CurveRow> rows;
  rows.reserve(beta1_grid.size());
  for (double beta1 : beta1_grid) {
    CurveRow row;
    row.beta1 = beta1;
    try {
      CostParams params = params_base;
      params.beta[0] = beta1;
      for (int j = 2; j <= params.num_experts(); ++j)
        params.beta[j - 1] =
            beta1 * params.agent_gflops[j] / (cost_ratio_divisor * params.agent_gflops[1]);
      TrainConfig config = train_config;
      config.costs = params;
      const TrainResult trained = train(log, model_factory(), config);
      const MetricsReport report = evaluate_system(log, trained.model, params, eval_opts);
      row.em = report.em_percent;
      row.expert_alloc = report.expert_allocation_percent;
      row.allocation = report.allocation;
      row.gflops_per_em = report.gflops_per_em;
    } catch (const Error&) {
      row.failed = true;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace l2d

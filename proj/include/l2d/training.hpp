#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/losses.hpp"
#include "l2d/rejector.hpp"
#include "l2d/rng.hpp"

namespace l2d {

enum class LrSchedule { linear_decay, constant };

struct TrainConfig {
  int epochs = 2;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double warmup_fraction = 0.1;
  LrSchedule schedule = LrSchedule::linear_decay;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  double nu = 1.0;
  CostParams costs;
  ValidationMode mode = ValidationMode::strict;

  void validate() const {
    if (epochs < 1) throw BadSpecError("epochs must be >= 1");
    if (batch_size < 1) throw BadSpecError("batch_size must be >= 1");
    if (learning_rate <= 0.0) throw BadSpecError("learning_rate must be > 0");
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
      throw BadSpecError("warmup_fraction must lie in [0,1]");
    if (momentum < 0.0 || momentum >= 1.0)
      throw BadSpecError("momentum must lie in [0,1)");
    if (nu < 0.0) throw BadSpecError("nu must be nonnegative");
  }
};

struct TraceRow {
  int step = 0;
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
};

struct TrainResult {
  RejectorModel model;
  std::vector<TraceRow> trace;
};

// Linear warmup from 0 to the peak rate over the first warmup_fraction of
// steps, then linear decay to 0 at total_steps.
inline double schedule_lr(int step, int total_steps, const TrainConfig& config) {
  if (config.schedule == LrSchedule::constant) return config.learning_rate;
  const double warmup_steps = config.warmup_fraction * total_steps;
  if (step < warmup_steps) return config.learning_rate * step / warmup_steps;
  const double decay_span = total_steps - warmup_steps;
  if (decay_span <= 0.0) return config.learning_rate;
  return config.learning_rate * (total_steps - step) / decay_span;
}

namespace detail {

struct BatchGradient {
  std::array<std::vector<double>, 2> grads;  // per head, flat param layout
  double mean_loss = 0.0;
};

// Batch-mean surrogate deferral loss and its gradient with respect to every
// model parameter.
inline BatchGradient batch_gradient(const RejectorModel& model,
                                    const std::vector<AgentPredictionRecord>& records,
                                    std::span<const std::size_t> batch,
                                    const CostParams& costs, const SurrogateSpec& spec) {
  BatchGradient out;
  for (auto& g : out.grads) g.assign(model.params_per_head(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<double> scores;
  std::vector<double> hidden_act;
  for (std::size_t idx : batch) {
    const AgentPredictionRecord& rec = records[idx];
    for (Head h : {Head::start, Head::end}) {
      const int hi = static_cast<int>(h);
      detail::score_head(model, model.head_params[hi], rec.features, scores, &hidden_act);
      const std::vector<double> tau = tau_weights(cost_vector(rec, h, costs));
      std::vector<double> gscores(scores.size(), 0.0);
      for (int j = 0; j < model.num_agents; ++j) {
        if (tau[j] == 0.0) continue;
        out.mean_loss += inv * tau[j] * comp_sum_surrogate(scores, j, spec);
        const std::vector<double> g = comp_sum_gradient(scores, j, spec);
        for (int k = 0; k < model.num_agents; ++k) gscores[k] += tau[j] * g[k];
      }
      detail::backprop_head(model, model.head_params[hi], rec.features, hidden_act,
                            gscores, inv, out.grads[hi]);
    }
  }
  return out;
}

inline double batch_loss(const RejectorModel& model,
                         const std::vector<AgentPredictionRecord>& records,
                         std::span<const std::size_t> batch, const CostParams& costs,
                         const SurrogateSpec& spec) {
  double total = 0.0;
  for (std::size_t idx : batch) {
    const auto [rs, re] = score(model, records[idx].features);
    total += surrogate_deferral_loss(rs, re, records[idx], costs, spec);
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace detail

// Mini-batch SGD with momentum on the surrogate deferral loss. Records are
// first put into canonical order (sorted by query_id) so the seeded shuffle,
// and therefore the final weights, do not depend on ingestion order.
inline TrainResult train(const std::vector<AgentPredictionRecord>& dataset,
                         RejectorModel model, const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw EmptyDatasetError("training needs at least one record");
  const CostParams costs = validate_cost_params(config.costs, config.mode);
  if (costs.num_agents() != model.num_agents)
    throw DimensionMismatchError("cost params and model disagree on the agent count");
  for (const auto& rec : dataset) rec.validate(model.num_agents, model.input_dim);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset[a].query_id < dataset[b].query_id;
  });

  const SurrogateSpec spec(config.nu, model.num_agents);
  const int batches_per_epoch =
      static_cast<int>((dataset.size() + config.batch_size - 1) / config.batch_size);
  const int total_steps = config.epochs * batches_per_epoch;

  TrainResult result;
  result.trace.reserve(total_steps);
  std::array<std::vector<double>, 2> velocity;
  for (auto& v : velocity) v.assign(model.params_per_head(), 0.0);

  Rng rng(config.seed);
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (int b = 0; b < batches_per_epoch; ++b, ++step) {
      const std::size_t begin = static_cast<std::size_t>(b) * config.batch_size;
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const auto bg = detail::batch_gradient(model, dataset, batch, costs, spec);
      if (!std::isfinite(bg.mean_loss))
        throw NonFiniteLossError("training diverged at step " + std::to_string(step));
      const double lr = schedule_lr(step, total_steps, config);
      for (int h = 0; h < 2; ++h) {
        auto& params = model.head_params[h];
        auto& vel = velocity[h];
        const auto& g = bg.grads[h];
        for (std::size_t k = 0; k < params.size(); ++k) {
          vel[k] = config.momentum * vel[k] - lr * g[k];
          params[k] += vel[k];
        }
      }
      result.trace.push_back({step, epoch, lr, bg.mean_loss});
    }
  }
  result.model = std::move(model);
  return result;
}

// Compares the analytic batch gradient against central finite differences on
// a random subset of at least 200 coordinates; returns the worst relative
// error.
inline double grad_check(const RejectorModel& model,
                         const std::vector<AgentPredictionRecord>& batch_records,
                         const TrainConfig& config, double epsilon) {
  if (epsilon < 1e-7 || epsilon > 1e-3)
    throw DomainErrorL2d("epsilon must lie in [1e-7, 1e-3]");
  if (batch_records.empty()) throw EmptyDatasetError("grad_check needs records");
  const CostParams costs = validate_cost_params(config.costs, config.mode);
  const SurrogateSpec spec(config.nu, model.num_agents);
  std::vector<std::size_t> batch(batch_records.size());
  std::iota(batch.begin(), batch.end(), 0);
  const auto analytic = detail::batch_gradient(model, batch_records, batch, costs, spec);

  const std::size_t per_head = model.params_per_head();
  const std::size_t total = 2 * per_head;
  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), 0);
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  rng.shuffle(coords);
  const std::size_t n_check = std::min<std::size_t>(total, std::max<std::size_t>(200, 1));

  RejectorModel probe = model;
  double worst = 0.0;
  for (std::size_t c = 0; c < n_check; ++c) {
    const std::size_t flat = coords[c];
    const int h = flat < per_head ? 0 : 1;
    const std::size_t k = flat % per_head;
    double& w = probe.head_params[h][k];
    const double saved = w;
    w = saved + epsilon;
    const double up = detail::batch_loss(probe, batch_records, batch, costs, spec);
    w = saved - epsilon;
    const double down = detail::batch_loss(probe, batch_records, batch, costs, spec);
    w = saved;
    const double fd = (up - down) / (2.0 * epsilon);
    const double a = analytic.grads[h][k];
    // the 1e-3 floor turns near-zero coordinates into an absolute check, so
    // finite-difference roundoff does not read as gradient error
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace l2d

// Command-line pipeline for the deferral engine: synthetic fixtures, rejector
// training, evaluation, cost sweeps, and the oracle/bound diagnostics.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "l2d/evaluation.hpp"
#include "l2d/io.hpp"
#include "l2d/losses.hpp"
#include "l2d/oracle.hpp"
#include "l2d/rejector.hpp"
#include "l2d/rng.hpp"
#include "l2d/training.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> nu;
  std::optional<std::string> mode;
  bool strict = false;
  bool permissive = false;
  std::optional<bool> beta_per_head;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON run configuration");
  cmd->add_option("--seed", flags.seed, "seed for all randomness");
  cmd->add_option("--nu", flags.nu, "surrogate family parameter");
  cmd->add_option("--mode", flags.mode, "allocation mode: joint or per-head")
      ->check(CLI::IsMember({"joint", "per-head"}));
  cmd->add_flag("--strict", flags.strict, "strict cost validation (default)");
  cmd->add_flag("--permissive", flags.permissive, "permissive cost validation");
  cmd->add_option("--beta-per-head", flags.beta_per_head,
                  "charge beta per head (true) or per query (false)");
}

l2d::RunConfig effective_config(const CommonFlags& flags) {
  l2d::RunConfig cfg = flags.config_path.empty() ? l2d::default_run_config()
                                                 : l2d::load_run_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.nu) cfg.nu = *flags.nu;
  if (flags.mode)
    cfg.mode = *flags.mode == "joint" ? l2d::AllocationMode::joint
                                      : l2d::AllocationMode::per_head;
  if (flags.strict) cfg.validation = l2d::ValidationMode::strict;
  if (flags.permissive) cfg.validation = l2d::ValidationMode::permissive;
  if (flags.beta_per_head)
    cfg.beta_mode = *flags.beta_per_head ? l2d::BetaMode::per_head
                                         : l2d::BetaMode::per_query;
  return cfg;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    double lo, hi, step;
    char c1, c2;
    std::istringstream ss(text);
    if (!(ss >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0.0)
      throw l2d::ParseError("grid must be 'lo:hi:step' or a comma list");
    for (double b = lo; b <= hi + 1e-12; b += step) grid.push_back(b);
    return grid;
  }
  std::istringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      grid.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw l2d::ParseError("bad grid value '" + cell + "'");
    }
  }
  if (grid.empty()) throw l2d::ParseError("empty grid");
  return grid;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::istringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw l2d::ParseError("bad value '" + cell + "'");
    }
  }
  return out;
}

std::vector<l2d::SpanPair> parse_predictions(const std::string& text) {
  std::vector<l2d::SpanPair> out;
  std::istringstream ss(text);
  std::string pair;
  while (std::getline(ss, pair, ';')) {
    int s, e;
    char c;
    std::istringstream ps(pair);
    if (!(ps >> s >> c >> e) || c != ',')
      throw l2d::ParseError("predictions must look like 's,e;s,e;...'");
    out.push_back(l2d::SpanPair{s, e});
  }
  if (out.empty()) throw l2d::ParseError("no predictions given");
  return out;
}

// Costs come from an explicit world file when given, else from the config's
// agent declarations, else from the stock world.
l2d::CostParams resolve_costs(const std::string& world_path, const CommonFlags& flags,
                              const l2d::RunConfig& cfg) {
  if (!world_path.empty()) return l2d::load_world(world_path).costs;
  if (!flags.config_path.empty()) return cfg.cost_params();
  return l2d::default_world_costs();
}

int cmd_simulate(const CommonFlags& flags, const std::string& out_world,
                 const std::string& out_log, int n, const std::string& eval_log,
                 int eval_n) {
  const l2d::RunConfig cfg = effective_config(flags);
  const std::uint64_t hash = l2d::config_hash(cfg);
  const l2d::CostParams costs =
      flags.config_path.empty() ? l2d::default_world_costs() : cfg.cost_params();
  l2d::validate_cost_params(costs, cfg.validation);
  const l2d::SyntheticWorld world =
      l2d::generate_world(l2d::default_cluster_spec(), costs, cfg.seed);
  if (!out_world.empty()) l2d::save_world(world, out_world, hash);
  if (!out_log.empty())
    l2d::save_agent_log(l2d::sample_log(world, n, cfg.seed + 1), out_log);
  if (!eval_log.empty())
    l2d::save_agent_log(l2d::sample_log(world, eval_n, cfg.seed + 2), eval_log);
  std::cout << "world: " << world.points.size() << " points, "
            << world.num_agents() << " agents, seed " << cfg.seed << "\n";
  return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& log_path,
              const std::string& world_path, const std::string& out_model,
              const std::string& trace_path, std::optional<int> epochs,
              std::optional<double> lr, std::optional<int> batch,
              std::optional<double> beta1, const std::string& beta_list,
              const std::string& arch) {
  l2d::RunConfig cfg = effective_config(flags);
  if (epochs) cfg.epochs = *epochs;
  if (lr) cfg.learning_rate = *lr;
  if (batch) cfg.batch_size = *batch;
  if (!arch.empty())
    cfg.architecture = arch == "mlp-1hidden" ? l2d::Architecture::mlp1
                                             : l2d::Architecture::linear;
  l2d::CostParams costs = resolve_costs(world_path, flags, cfg);
  if (beta1) costs.beta[0] = *beta1;
  if (!beta_list.empty()) {
    const std::vector<double> betas = parse_double_list(beta_list);
    if (betas.size() != costs.beta.size())
      throw l2d::DimensionMismatchError("--beta needs one value per expert");
    costs.beta = betas;
  }

  const std::vector<l2d::AgentPredictionRecord> log = l2d::load_agent_log(log_path);
  if (log.empty()) throw l2d::EmptyDatasetError(log_path + " has no records");
  l2d::TrainConfig train_cfg = cfg.train_config();
  train_cfg.costs = costs;
  const int dim = static_cast<int>(log[0].features.size());
  const l2d::RejectorModel init =
      l2d::init_model(cfg.architecture, dim, log[0].num_agents(), cfg.seed, cfg.hidden);
  const l2d::TrainResult result = l2d::train(log, init, train_cfg);

  const std::uint64_t hash = l2d::config_hash(cfg);
  l2d::save_model(result.model, out_model, hash);
  if (!trace_path.empty())
    l2d::write_trace_csv(result.trace, trace_path, cfg.seed, hash);
  std::cout << "trained " << log.size() << " records, " << result.trace.size()
            << " steps, final loss "
            << (result.trace.empty() ? 0.0 : result.trace.back().mean_loss) << "\n";
  return 0;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& log_path,
                 const std::string& world_path, const std::string& model_path,
                 std::optional<int> force_agent, int expert, int threads,
                 const std::string& out_report) {
  const l2d::RunConfig cfg = effective_config(flags);
  const l2d::CostParams costs =
      l2d::validate_cost_params(resolve_costs(world_path, flags, cfg), cfg.validation);
  const std::vector<l2d::AgentPredictionRecord> log = l2d::load_agent_log(log_path);
  const l2d::RejectorModel model = l2d::load_model(model_path);

  l2d::EvalOptions opts;
  opts.mode = cfg.mode;
  opts.force_agent = force_agent;
  opts.num_threads = threads;
  l2d::MetricsReport report = l2d::evaluate_system(log, model, costs, opts);
  if (!force_agent) {
    const l2d::ConfusionMatrix cm = l2d::confusion_matrix(log, model, expert);
    report.confusion = cm.mean;
    report.has_confusion = true;
    report.rates = l2d::tpr_fpr(log, model);
    report.has_rates = true;
  }

  const std::uint64_t hash = l2d::config_hash(cfg);
  const nlohmann::json j = l2d::report_to_json(report, cfg.seed, hash);
  std::cout << j.dump(2) << "\n";
  if (!out_report.empty()) {
    std::ofstream f(out_report, std::ios::trunc);
    if (!f) throw l2d::IoError("cannot open " + out_report + " for writing");
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& log_path,
              const std::string& world_path, const std::string& grid_text,
              const std::string& out_csv, double divisor) {
  const l2d::RunConfig cfg = effective_config(flags);
  const l2d::CostParams costs = resolve_costs(world_path, flags, cfg);
  const std::vector<l2d::AgentPredictionRecord> log = l2d::load_agent_log(log_path);
  if (log.empty()) throw l2d::EmptyDatasetError(log_path + " has no records");
  const std::vector<double> grid = parse_grid(grid_text);

  const int dim = static_cast<int>(log[0].features.size());
  const int agents = log[0].num_agents();
  l2d::TrainConfig train_cfg = cfg.train_config();
  train_cfg.costs = costs;
  l2d::EvalOptions opts;
  opts.mode = cfg.mode;
  const auto factory = [&] {
    return l2d::init_model(cfg.architecture, dim, agents, cfg.seed, cfg.hidden);
  };
  const std::vector<l2d::CurveRow> rows =
      l2d::beta_sweep(log, factory, costs, grid, train_cfg, opts, divisor);

  const std::uint64_t hash = l2d::config_hash(cfg);
  l2d::write_curve(rows, out_csv, cfg.seed, hash, agents);
  std::cout << "wrote " << rows.size() << " rows to " << out_csv << "\n";
  return 0;
}

int cmd_oracle(const CommonFlags& flags, const std::string& world_path,
               std::optional<double> beta1, int trials) {
  const l2d::RunConfig cfg = effective_config(flags);
  l2d::SyntheticWorld world = l2d::load_world(world_path);
  if (beta1) world.costs.beta[0] = *beta1;
  l2d::validate_cost_params(world.costs, cfg.validation);

  const double risk_per_head =
      l2d::bayes_risk(world, world.costs, l2d::AllocationMode::per_head, cfg.beta_mode);
  const double risk_joint =
      l2d::bayes_risk(world, world.costs, l2d::AllocationMode::joint, cfg.beta_mode);
  const std::vector<double> alloc =
      l2d::bayes_allocation(world, world.costs, cfg.mode, cfg.beta_mode);

  nlohmann::json j{{"seed", cfg.seed},
                   {"bayes_risk_per_head", risk_per_head},
                   {"bayes_risk_joint", risk_joint},
                   {"bayes_allocation", alloc},
                   {"expert_allocation_percent", 100.0 * (1.0 - alloc[0])}};
  if (trials > 0) {
    l2d::Rng rng(cfg.seed);
    int agree = 0;
    for (int t = 0; t < trials; ++t) {
      std::vector<double> err(world.num_agents());
      for (double& e : err) e = rng.uniform();
      const l2d::AgentId a = l2d::bayes_decide(err, world.costs);
      const auto [b, risk] = l2d::brute_force_conditional_min(err, world.costs);
      agree += a == b ? 1 : 0;
    }
    j["oracle_agreement_trials"] = trials;
    j["oracle_agreement"] = agree;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_bound(const CommonFlags& flags, const std::string& world_path,
              const std::string& model_path) {
  const l2d::RunConfig cfg = effective_config(flags);
  const l2d::SyntheticWorld world = l2d::load_world(world_path);
  const l2d::RejectorModel model = l2d::load_model(model_path);
  const l2d::BoundReport report = l2d::bound_check(world, model, world.costs, cfg.nu);
  nlohmann::json j{{"seed", cfg.seed},
                   {"nu", cfg.nu},
                   {"true_excess", report.true_excess},
                   {"surrogate_excess", report.surrogate_excess},
                   {"bound_value", report.bound_value},
                   {"min_pointwise_margin", report.min_pointwise_margin},
                   {"holds", report.holds}};
  std::cout << j.dump(2) << "\n";
  return report.holds ? 0 : 1;
}

int cmd_allocate(const CommonFlags& flags, const std::string& model_path,
                 const std::string& features_text, const std::string& predictions_text) {
  const l2d::RunConfig cfg = effective_config(flags);
  const l2d::RejectorModel model = l2d::load_model(model_path);
  l2d::AgentPredictionRecord rec;
  rec.query_id = "cli";
  rec.features = parse_double_list(features_text);
  rec.predictions = parse_predictions(predictions_text);
  rec.gold = l2d::SpanPair{0, 0};  // unused by allocation
  if (rec.num_agents() != model.num_agents)
    throw l2d::DimensionMismatchError("need one prediction pair per agent");
  const l2d::Allocation a = l2d::allocate(model, rec, cfg.mode);
  if (cfg.mode == l2d::AllocationMode::joint)
    std::cout << "agent=" << a.start_agent.value << " span=" << a.span.start << ","
              << a.span.end << "\n";
  else
    std::cout << "start_agent=" << a.start_agent.value
              << " end_agent=" << a.end_agent.value << " span=" << a.span.start << ","
              << a.span.end << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cost-aware query allocation over precomputed agent predictions"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic world and logs");
  std::string sim_world = "world.json", sim_log = "train.jsonl", sim_eval;
  int sim_n = 20000, sim_eval_n = 3000;
  add_common(simulate, flags);
  simulate->add_option("--out-world", sim_world, "world file to write");
  simulate->add_option("--out-log", sim_log, "training log to write");
  simulate->add_option("--n", sim_n, "training log size");
  simulate->add_option("--eval-log", sim_eval, "evaluation log to write");
  simulate->add_option("--eval-n", sim_eval_n, "evaluation log size");

  auto* train = app.add_subcommand("train", "train a rejector on an agent log");
  std::string tr_log, tr_world, tr_model = "rejector.bin", tr_trace, tr_arch, tr_betas;
  std::optional<int> tr_epochs, tr_batch;
  std::optional<double> tr_lr, tr_beta1;
  add_common(train, flags);
  train->add_option("--log", tr_log, "agent log (JSONL)")->required();
  train->add_option("--world", tr_world, "take cost params from this world file");
  train->add_option("--out-model", tr_model, "model file to write");
  train->add_option("--trace", tr_trace, "training trace CSV to write");
  train->add_option("--epochs", tr_epochs, "training epochs");
  train->add_option("--lr", tr_lr, "peak learning rate");
  train->add_option("--batch", tr_batch, "batch size");
  train->add_option("--beta1", tr_beta1, "override expert 1 consultation cost");
  train->add_option("--beta", tr_betas, "comma list of all expert betas");
  train->add_option("--arch", tr_arch, "linear or mlp-1hidden")
      ->check(CLI::IsMember({"linear", "mlp-1hidden"}));

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a rejector on a log");
  std::string ev_log, ev_world, ev_model, ev_report;
  std::optional<int> ev_force;
  int ev_expert = 1, ev_threads = 1;
  add_common(evaluate, flags);
  evaluate->add_option("--log", ev_log, "agent log (JSONL)")->required();
  evaluate->add_option("--world", ev_world, "take cost params from this world file");
  evaluate->add_option("--model", ev_model, "rejector model file")->required();
  evaluate->add_option("--force-agent", ev_force, "route every query to this agent");
  evaluate->add_option("--expert", ev_expert, "expert of interest for the confusion matrix");
  evaluate->add_option("--threads", ev_threads, "worker threads (same report as serial)");
  evaluate->add_option("--out-report", ev_report, "also write the report JSON here");

  auto* sweep = app.add_subcommand("sweep", "train/evaluate across a beta1 grid");
  std::string sw_log, sw_world, sw_grid = "0:0.5:0.05", sw_csv = "curve.csv";
  double sw_divisor = 20.0;
  add_common(sweep, flags);
  sweep->add_option("--log", sw_log, "agent log (JSONL)")->required();
  sweep->add_option("--world", sw_world, "take cost params from this world file");
  sweep->add_option("--grid", sw_grid, "beta1 grid: 'lo:hi:step' or comma list");
  sweep->add_option("--out-csv", sw_csv, "curve CSV to write");
  sweep->add_option("--divisor", sw_divisor, "divisor in the GFLOPs cost ratio");

  auto* oracle = app.add_subcommand("oracle", "Bayes risk and oracle diagnostics");
  std::string or_world;
  std::optional<double> or_beta1;
  int or_trials = 0;
  add_common(oracle, flags);
  oracle->add_option("--world", or_world, "world file")->required();
  oracle->add_option("--beta1", or_beta1, "override expert 1 consultation cost");
  oracle->add_option("--trials", or_trials, "random bayes-vs-brute-force agreement trials");

  auto* bound = app.add_subcommand("bound", "consistency bound report on a world");
  std::string bd_world, bd_model;
  add_common(bound, flags);
  bound->add_option("--world", bd_world, "world file")->required();
  bound->add_option("--model", bd_model, "rejector model file")->required();

  auto* alloc = app.add_subcommand("allocate", "route one record given via flags");
  std::string al_model, al_features, al_predictions;
  add_common(alloc, flags);
  alloc->add_option("--model", al_model, "rejector model file")->required();
  alloc->add_option("--features", al_features, "comma list of feature values")->required();
  alloc->add_option("--predictions", al_predictions, "agent spans 's,e;s,e;...'")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage problems exit 2, --help exits 0
  }

  try {
    if (simulate->parsed())
      return cmd_simulate(flags, sim_world, sim_log, sim_n, sim_eval, sim_eval_n);
    if (train->parsed())
      return cmd_train(flags, tr_log, tr_world, tr_model, tr_trace, tr_epochs, tr_lr,
                       tr_batch, tr_beta1, tr_betas, tr_arch);
    if (evaluate->parsed())
      return cmd_evaluate(flags, ev_log, ev_world, ev_model, ev_force, ev_expert,
                          ev_threads, ev_report);
    if (sweep->parsed())
      return cmd_sweep(flags, sw_log, sw_world, sw_grid, sw_csv, sw_divisor);
    if (oracle->parsed()) return cmd_oracle(flags, or_world, or_beta1, or_trials);
    if (bound->parsed()) return cmd_bound(flags, bd_world, bd_model);
    if (alloc->parsed()) return cmd_allocate(flags, al_model, al_features, al_predictions);
  } catch (const l2d::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/evaluation.hpp"
#include "l2d/oracle.hpp"
#include "l2d/rejector.hpp"
#include "l2d/training.hpp"

namespace l2d {

namespace detail {

// Shortest round-trip decimal form, identical on every run.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t hash_string(const std::string& s) {
  return fnv1a(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Agent log (JSON Lines)
// ---------------------------------------------------------------------------

inline std::vector<AgentPredictionRecord> parse_agent_log(std::istream& in) {
  std::vector<AgentPredictionRecord> records;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  int expected_agents = -1;
  int expected_dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    AgentPredictionRecord rec;
    try {
      rec.query_id = j.at("query_id").get<std::string>();
      rec.features = j.at("features").get<std::vector<double>>();
      const auto gold = j.at("gold");
      if (!gold.is_array() || gold.size() != 2)
        throw ParseError("line " + std::to_string(line_no) + ": gold must be [start, end]");
      rec.gold = SpanPair{gold[0].get<int>(), gold[1].get<int>()};
      for (const auto& p : j.at("predictions")) {
        if (!p.is_array() || p.size() != 2)
          throw ParseError("line " + std::to_string(line_no) +
                           ": each prediction must be [start, end]");
        rec.predictions.push_back(SpanPair{p[0].get<int>(), p[1].get<int>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (expected_agents < 0) {
      expected_agents = rec.num_agents();
      expected_dim = static_cast<int>(rec.features.size());
      if (expected_agents < 2)
        throw InconsistentDimsError("line " + std::to_string(line_no) +
                                    ": need the main model plus at least one expert");
    }
    try {
      rec.validate(expected_agents, expected_dim);
    } catch (const Error& e) {
      throw InconsistentDimsError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen_ids.insert(rec.query_id).second)
      throw DuplicateQueryIdError("line " + std::to_string(line_no) + ": " + rec.query_id);
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::vector<AgentPredictionRecord> load_agent_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  return parse_agent_log(f);
}

inline nlohmann::json record_to_json(const AgentPredictionRecord& rec) {
  nlohmann::json j;
  j["query_id"] = rec.query_id;
  j["features"] = rec.features;
  j["gold"] = {rec.gold.start, rec.gold.end};
  auto preds = nlohmann::json::array();
  for (const SpanPair& p : rec.predictions) preds.push_back({p.start, p.end});
  j["predictions"] = preds;
  return j;
}

inline void save_agent_log(const std::vector<AgentPredictionRecord>& records,
                           const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  for (const auto& rec : records) f << record_to_json(rec).dump() << '\n';
  if (!f) throw IoError("short write to " + path);
}

// ---------------------------------------------------------------------------
// World files (JSON)
// ---------------------------------------------------------------------------

inline nlohmann::json cost_params_to_json(const CostParams& p) {
  return nlohmann::json{{"alpha", p.alpha},
                        {"beta", p.beta},
                        {"agent_gflops", p.agent_gflops},
                        {"rejector_gflops", p.rejector_gflops}};
}

inline CostParams cost_params_from_json(const nlohmann::json& j) {
  CostParams p;
  p.alpha = j.at("alpha").get<std::vector<double>>();
  p.beta = j.at("beta").get<std::vector<double>>();
  p.agent_gflops = j.at("agent_gflops").get<std::vector<double>>();
  p.rejector_gflops = j.at("rejector_gflops").get<double>();
  return p;
}

inline void save_world(const SyntheticWorld& world, const std::string& path,
                       std::uint64_t config_hash = 0) {
  world.validate();
  nlohmann::json j;
  j["seed"] = world.seed;
  j["config_hash"] = detail::hex64(config_hash);
  j["context_length"] = world.context_length;
  j["costs"] = cost_params_to_json(world.costs);
  auto points = nlohmann::json::array();
  for (const WorldPoint& p : world.points) {
    points.push_back(nlohmann::json{{"features", p.features},
                                    {"mass", p.mass},
                                    {"gold", {p.gold.start, p.gold.end}},
                                    {"err_start", p.err[0]},
                                    {"err_end", p.err[1]}});
  }
  j["points"] = points;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << j.dump(2) << '\n';
  if (!f) throw IoError("short write to " + path);
}

inline SyntheticWorld load_world(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  SyntheticWorld world;
  try {
    world.seed = j.at("seed").get<std::uint64_t>();
    world.context_length = j.value("context_length", 32);
    world.costs = cost_params_from_json(j.at("costs"));
    for (const auto& pj : j.at("points")) {
      WorldPoint p;
      p.features = pj.at("features").get<std::vector<double>>();
      p.mass = pj.at("mass").get<double>();
      p.gold = SpanPair{pj.at("gold")[0].get<int>(), pj.at("gold")[1].get<int>()};
      p.err[0] = pj.at("err_start").get<std::vector<double>>();
      p.err[1] = pj.at("err_end").get<std::vector<double>>();
      world.points.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  world.validate();
  return world;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct AgentDecl {
  std::string name;
  double gflops = 0.0;
  double alpha = 1.0;  // ignored for agent 0
  double beta = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  AllocationMode mode = AllocationMode::joint;
  ValidationMode validation = ValidationMode::strict;
  BetaMode beta_mode = BetaMode::per_head;
  double nu = 1.0;
  std::vector<AgentDecl> agents;
  double rejector_gflops = 0.15;
  Architecture architecture = Architecture::linear;
  int hidden = 64;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double warmup_fraction = 0.1;
  LrSchedule schedule = LrSchedule::linear_decay;
  double momentum = 0.9;
  double cost_ratio_divisor = 20.0;

  CostParams cost_params() const {
    CostParams p;
    p.rejector_gflops = rejector_gflops;
    for (std::size_t j = 0; j < agents.size(); ++j) {
      p.agent_gflops.push_back(agents[j].gflops);
      if (j > 0) {
        p.alpha.push_back(agents[j].alpha);
        p.beta.push_back(agents[j].beta);
      }
    }
    return p;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.warmup_fraction = warmup_fraction;
    c.schedule = schedule;
    c.momentum = momentum;
    c.seed = seed;
    c.nu = nu;
    c.costs = cost_params();
    c.mode = validation;
    return c;
  }
};

// The paper-style three-agent setup: a general main model plus a light and a
// heavy specialist expert.
inline RunConfig default_run_config() {
  RunConfig c;
  c.agents = {{"main", 373.66, 1.0, 0.0},
              {"expert1", 32.68, 1.0, 0.0},
              {"expert2", 928.08, 1.0, 0.0}};
  return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json agents = nlohmann::json::array();
  for (const AgentDecl& a : c.agents)
    agents.push_back(nlohmann::json{
        {"name", a.name}, {"gflops", a.gflops}, {"alpha", a.alpha}, {"beta", a.beta}});
  return nlohmann::json{
      {"seed", c.seed},
      {"mode", c.mode == AllocationMode::joint ? "joint" : "per-head"},
      {"validation", c.validation == ValidationMode::strict ? "strict" : "permissive"},
      {"beta_per_head", c.beta_mode == BetaMode::per_head},
      {"nu", c.nu},
      {"agents", agents},
      {"rejector_gflops", c.rejector_gflops},
      {"architecture", c.architecture == Architecture::linear ? "linear" : "mlp-1hidden"},
      {"hidden", c.hidden},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"warmup_fraction", c.warmup_fraction},
      {"schedule", c.schedule == LrSchedule::linear_decay ? "linear-decay" : "constant"},
      {"momentum", c.momentum},
      {"cost_ratio_divisor", c.cost_ratio_divisor}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c = default_run_config();
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) {
      const std::string m = j.at("mode").get<std::string>();
      if (m == "joint")
        c.mode = AllocationMode::joint;
      else if (m == "per-head")
        c.mode = AllocationMode::per_head;
      else
        throw ParseError("mode must be 'joint' or 'per-head'");
    }
    if (j.contains("validation")) {
      const std::string v = j.at("validation").get<std::string>();
      if (v == "strict")
        c.validation = ValidationMode::strict;
      else if (v == "permissive")
        c.validation = ValidationMode::permissive;
      else
        throw ParseError("validation must be 'strict' or 'permissive'");
    }
    if (j.contains("beta_per_head"))
      c.beta_mode = j.at("beta_per_head").get<bool>() ? BetaMode::per_head
                                                      : BetaMode::per_query;
    c.nu = j.value("nu", c.nu);
    if (j.contains("agents")) {
      c.agents.clear();
      for (const auto& aj : j.at("agents")) {
        AgentDecl a;
        a.name = aj.value("name", "agent" + std::to_string(c.agents.size()));
        a.gflops = aj.value("gflops", 0.0);
        a.alpha = aj.value("alpha", 1.0);
        a.beta = aj.value("beta", 0.0);
        c.agents.push_back(std::move(a));
      }
      if (c.agents.size() < 2)
        throw ParseError("need the main model plus at least one expert");
    }
    c.rejector_gflops = j.value("rejector_gflops", c.rejector_gflops);
    if (j.contains("architecture")) {
      const std::string a = j.at("architecture").get<std::string>();
      if (a == "linear")
        c.architecture = Architecture::linear;
      else if (a == "mlp-1hidden")
        c.architecture = Architecture::mlp1;
      else
        throw ParseError("architecture must be 'linear' or 'mlp-1hidden'");
    }
    c.hidden = j.value("hidden", c.hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    if (j.contains("schedule")) {
      const std::string s = j.at("schedule").get<std::string>();
      if (s == "linear-decay")
        c.schedule = LrSchedule::linear_decay;
      else if (s == "constant")
        c.schedule = LrSchedule::constant;
      else
        throw ParseError("schedule must be 'linear-decay' or 'constant'");
    }
    c.momentum = j.value("momentum", c.momentum);
    c.cost_ratio_divisor = j.value("cost_ratio_divisor", c.cost_ratio_divisor);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline std::uint64_t config_hash(const RunConfig& c) {
  return detail::hash_string(run_config_to_json(c).dump());
}

// ---------------------------------------------------------------------------
// CSV outputs
// ---------------------------------------------------------------------------

inline std::string provenance_line(std::uint64_t seed, std::uint64_t hash) {
  return "# seed=" + std::to_string(seed) + " config_hash=" + detail::hex64(hash);
}

inline void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path,
                            std::uint64_t seed, std::uint64_t hash) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << provenance_line(seed, hash) << '\n';
  f << "step,epoch,lr,mean_loss\n";
  for (const TraceRow& row : trace)
    f << row.step << ',' << row.epoch << ',' << detail::format_double(row.lr) << ','
      << detail::format_double(row.mean_loss) << '\n';
  if (!f) throw IoError("short write to " + path);
}

inline void write_curve(const std::vector<CurveRow>& rows, const std::string& path,
                        std::uint64_t seed, std::uint64_t hash, int num_agents) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << provenance_line(seed, hash) << '\n';
  f << "beta1,em,expert_alloc";
  for (int j = 0; j < num_agents; ++j) f << ",alloc_agent" << j;
  f << ",gflops_per_em\n";
  for (const CurveRow& row : rows) {
    f << detail::format_double(row.beta1) << ',';
    if (row.failed) {
      f << "nan,nan";
      for (int j = 0; j < num_agents; ++j) f << ",nan";
      f << ",nan\n";
      continue;
    }
    f << detail::format_double(row.em) << ',' << detail::format_double(row.expert_alloc);
    for (int j = 0; j < num_agents; ++j) f << ',' << detail::format_double(row.allocation[j]);
    f << ',' << detail::format_double(row.gflops_per_em) << '\n';
  }
  if (!f) throw IoError("short write to " + path);
}

inline std::vector<CurveRow> read_curve(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<CurveRow> rows;
  std::string line;
  bool header_seen = false;
  int num_agents = 0;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      num_agents = 0;
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, ','))
        if (col.rfind("alloc_agent", 0) == 0) ++num_agents;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(ss, cell, ',')) {
      try {
        cells.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(path + " line " + std::to_string(line_no) + ": bad number '" +
                         cell + "'");
      }
    }
    if (static_cast<int>(cells.size()) != 4 + num_agents)
      throw ParseError(path + " line " + std::to_string(line_no) + ": wrong column count");
    CurveRow row;
    row.beta1 = cells[0];
    row.em = cells[1];
    row.expert_alloc = cells[2];
    row.allocation.assign(cells.begin() + 3, cells.begin() + 3 + num_agents);
    row.gflops_per_em = cells[3 + num_agents];
    row.failed = std::isnan(row.em);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json report_to_json(const MetricsReport& r, std::uint64_t seed,
                                     std::uint64_t hash) {
  nlohmann::json j{{"seed", seed},
                   {"config_hash", detail::hex64(hash)},
                   {"em_percent", r.em_percent},
                   {"allocation", r.allocation},
                   {"expert_allocation_percent", r.expert_allocation_percent},
                   {"mean_gflops_per_query", r.mean_gflops_per_query},
                   {"gflops_per_em", r.gflops_per_em},
                   {"beta", r.beta}};
  if (r.has_confusion) j["confusion"] = r.confusion;
  if (r.has_rates) {
    j["tpr"] = r.rates.tpr;
    j["fpr"] = r.rates.fpr;
    j["tpr_denominator_zero"] = r.rates.tpr_denominator_zero;
    j["fpr_denominator_zero"] = r.rates.fpr_denominator_zero;
  }
  return j;
}

}  // namespace l2d

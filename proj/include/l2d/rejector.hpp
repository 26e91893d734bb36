#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/rng.hpp"

namespace l2d {

enum class Architecture { linear, mlp1 };

enum class AllocationMode { per_head, joint };

// Dual-head scorer over precomputed feature vectors. Each head maps a
// d-vector to J+1 rbar scores (larger = more preferred). Weights live in one
// flat vector per head so the trainer can treat them uniformly:
//   linear: [W (A x d) row-major | b (A)]
//   mlp1:   [W1 (h x d) | b1 (h) | W2 (A x h) | b2 (A)]
// pinned_zero forces rbar(x, 0) = 0 on both heads, matching the theoretical
// construction where the main model's score is the fixed reference.
struct RejectorModel {
  Architecture arch = Architecture::linear;
  int input_dim = 0;
  int num_agents = 0;
  int hidden = 0;  // 0 for linear
  bool pinned_zero = false;
  std::uint64_t seed = 0;
  std::array<std::vector<double>, 2> head_params;  // [start, end]

  std::size_t params_per_head() const {
    const std::size_t d = static_cast<std::size_t>(input_dim);
    const std::size_t a = static_cast<std::size_t>(num_agents);
    const std::size_t h = static_cast<std::size_t>(hidden);
    return arch == Architecture::linear ? a * d + a : h * d + h + a * h + a;
  }
};

inline RejectorModel init_model(Architecture arch, int input_dim, int num_agents,
                                std::uint64_t seed, int hidden = 64,
                                bool pinned_zero = false) {
  if (input_dim < 1) throw BadDimensionError("input_dim must be >= 1");
  if (num_agents < 2) throw BadDimensionError("need the main model plus at least one expert");
  if (arch == Architecture::mlp1 && hidden < 1)
    throw BadDimensionError("mlp hidden width must be >= 1");
  RejectorModel m;
  m.arch = arch;
  m.input_dim = input_dim;
  m.num_agents = num_agents;
  m.hidden = arch == Architecture::mlp1 ? hidden : 0;
  m.pinned_zero = pinned_zero;
  m.seed = seed;
  Rng rng(seed);
  const double half_width = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (auto& params : m.head_params) {
    params.assign(m.params_per_head(), 0.0);
    if (arch == Architecture::linear) {
      for (int k = 0; k < num_agents * input_dim; ++k)
        params[k] = rng.uniform(-half_width, half_width);
      // biases stay zero
    } else {
      std::size_t at = 0;
      for (int k = 0; k < hidden * input_dim; ++k) params[at++] = rng.uniform(-half_width, half_width);
      at += hidden;  // b1 zero
      for (int k = 0; k < num_agents * hidden; ++k) params[at++] = rng.uniform(-half_width, half_width);
      // b2 zero
    }
  }
  return m;
}

namespace detail {

inline void score_head(const RejectorModel& m, std::span<const double> params,
                       std::span<const double> x, std::vector<double>& scores,
                       std::vector<double>* hidden_out = nullptr) {
  const int d = m.input_dim;
  const int a = m.num_agents;
  scores.assign(a, 0.0);
  if (m.arch == Architecture::linear) {
    for (int k = 0; k < a; ++k) {
      double s = params[a * d + k];  // bias
      const double* row = params.data() + static_cast<std::size_t>(k) * d;
      for (int i = 0; i < d; ++i) s += row[i] * x[i];
      scores[k] = s;
    }
  } else {
    const int h = m.hidden;
    const double* w1 = params.data();
    const double* b1 = w1 + static_cast<std::size_t>(h) * d;
    const double* w2 = b1 + h;
    const double* b2 = w2 + static_cast<std::size_t>(a) * h;
    std::vector<double> z(h);
    for (int k = 0; k < h; ++k) {
      double s = b1[k];
      const double* row = w1 + static_cast<std::size_t>(k) * d;
      for (int i = 0; i < d; ++i) s += row[i] * x[i];
      z[k] = s > 0.0 ? s : 0.0;
    }
    for (int k = 0; k < a; ++k) {
      double s = b2[k];
      const double* row = w2 + static_cast<std::size_t>(k) * h;
      for (int i = 0; i < h; ++i) s += row[i] * z[i];
      scores[k] = s;
    }
    if (hidden_out) *hidden_out = std::move(z);
  }
  if (m.pinned_zero) scores[0] = 0.0;
}

// Accumulates d(loss)/d(params) given d(loss)/d(scores), scaled by `weight`.
inline void backprop_head(const RejectorModel& m, std::span<const double> params,
                          std::span<const double> x, std::span<const double> hidden_act,
                          std::span<const double> gscores, double weight,
                          std::span<double> gparams) {
  const int d = m.input_dim;
  const int a = m.num_agents;
  std::vector<double> gs(gscores.begin(), gscores.end());
  if (m.pinned_zero) gs[0] = 0.0;  // score 0 is a constant, not a function of params
  if (m.arch == Architecture::linear) {
    for (int k = 0; k < a; ++k) {
      const double g = weight * gs[k];
      if (g == 0.0) continue;
      double* row = gparams.data() + static_cast<std::size_t>(k) * d;
      for (int i = 0; i < d; ++i) row[i] += g * x[i];
      gparams[static_cast<std::size_t>(a) * d + k] += g;
    }
  } else {
    const int h = m.hidden;
    const double* w2 = params.data() + static_cast<std::size_t>(h) * d + h;
    double* gw1 = gparams.data();
    double* gb1 = gw1 + static_cast<std::size_t>(h) * d;
    double* gw2 = gb1 + h;
    double* gb2 = gw2 + static_cast<std::size_t>(a) * h;
    std::vector<double> gz(h, 0.0);
    for (int k = 0; k < a; ++k) {
      const double g = weight * gs[k];
      if (g == 0.0) continue;
      double* row = gw2 + static_cast<std::size_t>(k) * h;
      for (int i = 0; i < h; ++i) {
        row[i] += g * hidden_act[i];
        gz[i] += g * w2[static_cast<std::size_t>(k) * h + i];
      }
      gb2[k] += g;
    }
    for (int k = 0; k < h; ++k) {
      if (hidden_act[k] <= 0.0 || gz[k] == 0.0) continue;  // ReLU gate
      double* row = gw1 + static_cast<std::size_t>(k) * d;
      for (int i = 0; i < d; ++i) row[i] += gz[k] * x[i];
      gb1[k] += gz[k];
    }
  }
}

}  // namespace detail

// Scores one feature vector through both heads.
inline std::pair<std::vector<double>, std::vector<double>> score(
    const RejectorModel& m, std::span<const double> features) {
  if (static_cast<int>(features.size()) != m.input_dim)
    throw DimensionMismatchError("feature vector length does not match the model");
  std::pair<std::vector<double>, std::vector<double>> out;
  detail::score_head(m, m.head_params[0], features, out.first);
  detail::score_head(m, m.head_params[1], features, out.second);
  return out;
}

// Argmax over rbar; ties go to the lowest agent index (the main model wins
// an exact tie with any expert).
inline AgentId decide_per_head(std::span<const double> rbar) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(rbar.size()); ++j)
    if (rbar[j] > rbar[best]) best = j;
  return AgentId{best};
}

// Single-agent rule: argmax of the summed head scores, same tie rule.
inline AgentId decide_joint(std::span<const double> rbar_start,
                            std::span<const double> rbar_end) {
  if (rbar_start.size() != rbar_end.size())
    throw DimensionMismatchError("joint decision needs equally sized head scores");
  int best = 0;
  double best_sum = rbar_start[0] + rbar_end[0];
  for (int j = 1; j < static_cast<int>(rbar_start.size()); ++j) {
    const double s = rbar_start[j] + rbar_end[j];
    if (s > best_sum) {
      best = j;
      best_sum = s;
    }
  }
  return AgentId{best};
}

struct Allocation {
  AgentId start_agent;
  AgentId end_agent;
  SpanPair span;  // joint: the chosen agent's pair; per-head: composite
};

inline Allocation allocate(const RejectorModel& m, const AgentPredictionRecord& record,
                           AllocationMode mode) {
  if (record.num_agents() != m.num_agents)
    throw DimensionMismatchError("record agent count does not match the model");
  const auto [rs, re] = score(m, record.features);
  Allocation out;
  if (mode == AllocationMode::joint) {
    const AgentId a = decide_joint(rs, re);
    out.start_agent = out.end_agent = a;
    out.span = record.predictions[a.value];
  } else {
    out.start_agent = decide_per_head(rs);
    out.end_agent = decide_per_head(re);
    out.span = SpanPair{record.predictions[out.start_agent.value].start,
                        record.predictions[out.end_agent.value].end};
  }
  return out;
}

namespace detail {

inline constexpr char kModelMagic[4] = {'L', '2', 'D', 'R'};
inline constexpr std::uint32_t kModelVersion = 1;

inline std::uint64_t fnv1a(const unsigned char* data, std::size_t n,
                           std::uint64_t h = 14695981039346656037ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& at) {
  if (at + sizeof(T) > in.size())
    throw FormatVersionMismatchError("model file truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  at += sizeof(T);
  return v;
}

}  // namespace detail

// Versioned binary model format: header (magic, version, architecture,
// dimensions, seed, config hash), row-major weight payload for the start then
// end head, and a trailing FNV-1a checksum of the payload bytes.
inline void save_model(const RejectorModel& m, const std::string& path,
                       std::uint64_t config_hash = 0) {
  std::string buf;
  buf.append(detail::kModelMagic, 4);
  detail::put_le<std::uint32_t>(buf, detail::kModelVersion);
  buf.push_back(static_cast<char>(m.arch == Architecture::linear ? 0 : 1));
  buf.push_back(static_cast<char>(m.pinned_zero ? 1 : 0));
  detail::put_le<std::uint16_t>(buf, 0);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(m.input_dim));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(m.num_agents));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(m.hidden));
  detail::put_le<std::uint64_t>(buf, m.seed);
  detail::put_le<std::uint64_t>(buf, config_hash);
  detail::put_le<std::uint64_t>(buf, 2 * m.params_per_head());
  const std::size_t payload_begin = buf.size();
  for (const auto& params : m.head_params)
    for (double w : params) {
      std::uint64_t bits;
      std::memcpy(&bits, &w, sizeof bits);
      detail::put_le<std::uint64_t>(buf, bits);
    }
  const std::uint64_t checksum = detail::fnv1a(
      reinterpret_cast<const unsigned char*>(buf.data()) + payload_begin,
      buf.size() - payload_begin);
  detail::put_le<std::uint64_t>(buf, checksum);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("short write to " + path);
}

inline RejectorModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t at = 0;
  if (buf.size() < 4 || std::memcmp(buf.data(), detail::kModelMagic, 4) != 0)
    throw FormatVersionMismatchError("not a rejector model file: " + path);
  at = 4;
  const auto version = detail::get_le<std::uint32_t>(buf, at);
  if (version != detail::kModelVersion)
    throw FormatVersionMismatchError("unsupported model format version " +
                                     std::to_string(version));
  RejectorModel m;
  const auto arch = detail::get_le<std::uint8_t>(buf, at);
  if (arch > 1) throw FormatVersionMismatchError("unknown architecture tag");
  m.arch = arch == 0 ? Architecture::linear : Architecture::mlp1;
  m.pinned_zero = detail::get_le<std::uint8_t>(buf, at) != 0;
  detail::get_le<std::uint16_t>(buf, at);  // reserved
  m.input_dim = static_cast<int>(detail::get_le<std::uint32_t>(buf, at));
  m.num_agents = static_cast<int>(detail::get_le<std::uint32_t>(buf, at));
  m.hidden = static_cast<int>(detail::get_le<std::uint32_t>(buf, at));
  m.seed = detail::get_le<std::uint64_t>(buf, at);
  detail::get_le<std::uint64_t>(buf, at);  // config hash
  const auto count = detail::get_le<std::uint64_t>(buf, at);
  if (count != 2 * m.params_per_head())
    throw FormatVersionMismatchError("weight payload size does not match the header");
  const std::size_t payload_begin = at;
  for (auto& params : m.head_params) {
    params.resize(m.params_per_head());
    for (double& w : params) {
      const std::uint64_t bits = detail::get_le<std::uint64_t>(buf, at);
      std::memcpy(&w, &bits, sizeof w);
    }
  }
  const std::uint64_t expected = detail::fnv1a(
      reinterpret_cast<const unsigned char*>(buf.data()) + payload_begin, at - payload_begin);
  const std::uint64_t stored = detail::get_le<std::uint64_t>(buf, at);
  if (stored != expected) throw ChecksumMismatchError("model payload checksum mismatch");
  return m;
}

}  // namespace l2d

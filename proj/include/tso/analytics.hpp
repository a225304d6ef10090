#pragma once

/*
 * Score-distribution moments, the enumerated-KL alignment proxy, and
 * telemetry CSV export.
 */

#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tso/error.hpp"
#include "tso/matrix.hpp"
#include "tso/policy_io.hpp"
#include "tso/seq.hpp"
#include "tso/trainer.hpp"

namespace tso {

/// Population moments. skewness = m3 / m2^1.5, excess_kurtosis = m4 / m2^2 - 3.
struct ScoreStats {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

inline ScoreStats score_stats(std::span<const double> scores) {
  if (scores.size() < 4) throw InputError("score_stats needs at least 4 scores, got " + std::to_string(scores.size()));
  const double n = static_cast<double>(scores.size());
  double sum = 0.0;
  for (double s : scores) sum += s;
  const double mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double s : scores) {
    const double d = s - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) throw InputError("degenerate score distribution (zero variance)");
  return {scores.size(), mean, m2, m3 / std::pow(m2, 1.5), m4 / (m2 * m2) - 3.0};
}

/// KL(truth(.|x) || policy(.|x)) over the enumerated response space of the
/// initial context `ctx`.
inline double kl_from_context(const TabularPolicy& truth, const TabularPolicy& policy,
                              const std::vector<Response>& responses, std::size_t ctx) {
  double kl = 0.0;
  for (const auto& y : responses) {
    const double lt = log_prob_from_context(truth, ctx, y);
    const double lp = log_prob_from_context(policy, ctx, y);
    kl += std::exp(lt) * (lt - lp);
  }
  return kl;
}

inline double kl_divergence(const TabularPolicy& truth, const TabularPolicy& policy, const SeqSpec& spec,
                            const Prompt& x) {
  return kl_from_context(truth, policy, enumerate_responses(spec, truth.vocab()), initial_context(truth, x));
}

/// Negated prompt-weighted mean of KL(truth || policy). Prompts are grouped by
/// initial context and summed in context order, so the value does not depend
/// on the order of the prompt list.
inline double alignment_proxy(const TabularPolicy& policy, const TabularPolicy& truth, const SeqSpec& spec,
                              const PromptSet& prompts) {
  prompts.validate();
  if (!(policy.vocab() == truth.vocab()) || policy.order() != truth.order())
    throw InputError("policy and truth shapes differ");
  const auto responses = enumerate_responses(spec, truth.vocab());
  std::map<std::size_t, double> weight_by_ctx;
  const double uniform_w = 1.0 / static_cast<double>(prompts.prompts.size());
  for (std::size_t i = 0; i < prompts.prompts.size(); ++i)
    weight_by_ctx[initial_context(truth, prompts.prompts[i])] += prompts.uniform() ? 1.0 : prompts.weights[i];
  double total = 0.0;
  for (const auto& [ctx, w] : weight_by_ctx) {
    const double kl = kl_from_context(truth, policy, responses, ctx);
    total += (prompts.uniform() ? w * uniform_w : w) * kl;
  }
  return -total;
}

inline constexpr const char* kTelemetryHeader = "step,iter,minibatch,loss,reward_w,reward_l,s,lr";

inline std::string telemetry_csv(const TelemetryLog& records) {
  std::string out = std::string(kTelemetryHeader) + "\n";
  for (const auto& r : records)
    out += std::to_string(r.step) + "," + std::to_string(r.iter) + "," + std::to_string(r.minibatch) + "," +
           format_double(r.loss) + "," + format_double(r.reward_w) + "," + format_double(r.reward_l) + "," +
           format_double(r.s) + "," + format_double(r.lr) + "\n";
  return out;
}

inline void export_telemetry_csv(const TelemetryLog& records, const std::string& path) {
  try {
    write_text_file(path, telemetry_csv(records));
  } catch (const IoError& e) {
    throw IoError("telemetry export to '" + path + "' failed: " + e.what());
  }
}

inline TelemetryLog parse_telemetry_csv(std::string_view text) {
  TelemetryLog out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (header) {
      if (line != kTelemetryHeader) throw ParseError("unexpected telemetry header '" + std::string(line) + "'");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::size_t c = 0;
    while (true) {
      auto comma = line.find(',', c);
      cells.push_back(line.substr(c, comma - c));
      if (comma == std::string_view::npos) break;
      c = comma + 1;
    }
    if (cells.size() != 8) throw ParseError("telemetry row has " + std::to_string(cells.size()) + " cells");
    out.push_back({static_cast<long>(parse_int(cells[0])), static_cast<int>(parse_int(cells[1])),
                   static_cast<int>(parse_int(cells[2])), parse_double(cells[3]), parse_double(cells[4]),
                   parse_double(cells[5]), parse_double(cells[6]), parse_double(cells[7])});
  }
  if (header) throw ParseError("telemetry file has no header");
  return out;
}

inline TelemetryLog load_telemetry_csv(const std::string& path) { return parse_telemetry_csv(read_text_file(path)); }

struct PromptScoreStats {
  std::size_t prompt_id = 0;
  ScoreStats stats;
};

inline std::string prompt_stats_csv(const std::vector<PromptScoreStats>& rows) {
  std::string out = "prompt_id,n,mean,var,skew,kurt\n";
  for (const auto& r : rows)
    out += std::to_string(r.prompt_id) + "," + std::to_string(r.stats.n) + "," + format_double(r.stats.mean) + "," +
           format_double(r.stats.variance) + "," + format_double(r.stats.skewness) + "," +
           format_double(r.stats.excess_kurtosis) + "\n";
  return out;
}

}  // namespace tso

#pragma once

/*
 * Judges, transcript parsing, and evaluation correction.
 *
 * A judge scores (prompt, response) on a closed range, [2, 10] by default.
 * Base-model samples are scored, the mean score becomes the threshold tau,
 * and samples above tau join the chosen pool while the rest (ties included)
 * join the rejected pool. Pairs are then formed per prompt.
 */

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "tso/error.hpp"
#include "tso/matrix.hpp"
#include "tso/preference.hpp"
#include "tso/random.hpp"
#include "tso/seq.hpp"

namespace tso {

struct ScoreRange {
  double lo = 2.0;
  double hi = 10.0;

  double clamp(double v) const { return std::clamp(v, lo, hi); }
  double mid() const { return 0.5 * (lo + hi); }
};

/// Stateless scorer. Copies share the underlying scoring function.
class Judge {
 public:
  enum class Kind { Oracle, Biased, Transcript };
  using ScoreFn = std::function<double(const Prompt&, const Response&)>;

  Judge(Kind kind, ScoreRange range, ScoreFn fn) : kind_(kind), range_(range), fn_(std::move(fn)) {}

  double score(const Prompt& x, const Response& y) const { return range_.clamp(fn_(x, y)); }
  Kind kind() const noexcept { return kind_; }
  const ScoreRange& range() const noexcept { return range_; }

 private:
  Kind kind_;
  ScoreRange range_;
  ScoreFn fn_;
};

/// Scores by the truth policy's log-likelihood, mapped affinely from
/// [min, max] over the enumerated response space of the prompt's context
/// onto the score range.
inline Judge make_oracle_judge(const TabularPolicy& truth, const SeqSpec& spec, ScoreRange range = {}) {
  const auto responses = enumerate_responses(spec, truth.vocab());
  struct Bounds {
    double lo, hi;
  };
  std::vector<Bounds> bounds(truth.num_contexts());
  for (std::size_t c = 0; c < truth.num_contexts(); ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& y : responses) {
      const double lp = log_prob_from_context(truth, c, y);
      lo = std::min(lo, lp);
      hi = std::max(hi, lp);
    }
    bounds[c] = {lo, hi};
  }
  auto shared = std::make_shared<const std::pair<TabularPolicy, std::vector<Bounds>>>(truth, std::move(bounds));
  return Judge(Judge::Kind::Oracle, range, [shared, spec, range](const Prompt& x, const Response& y) {
    const auto& [policy, b] = *shared;
    const Bounds& bb = b[initial_context(policy, x)];
    const double lp = log_prob(policy, spec, x, y);
    if (bb.hi - bb.lo <= 0.0) return range.mid();
    return range.lo + (range.hi - range.lo) * (lp - bb.lo) / (bb.hi - bb.lo);
  });
}

/// Agrees with `oracle` except on OOD prompts, where the oracle's score is
/// mirrored about the range midpoint and shifted by `offset`.
inline Judge make_biased_judge(const Judge& oracle, std::set<Prompt> ood_prompts, double offset) {
  auto ood = std::make_shared<const std::set<Prompt>>(std::move(ood_prompts));
  const ScoreRange range = oracle.range();
  return Judge(Judge::Kind::Biased, range, [oracle, ood, range, offset](const Prompt& x, const Response& y) {
    const double s = oracle.score(x, y);
    if (!ood->contains(x)) return s;
    return range.clamp(range.lo + range.hi - s + offset);
  });
}

/// Score after the last "Score:" marker: the first decimal numeral that
/// follows it, with any trailing annotation ignored.
inline double parse_judge_score(std::string_view text) {
  static constexpr std::string_view kMarker = "Score:";
  const auto pos = text.rfind(kMarker);
  if (pos == std::string_view::npos) throw ParseError("no 'Score:' marker in judge transcript");
  static const std::regex numeral(R"([-+]?[0-9]+(\.[0-9]+)?)");
  const std::string tail(text.substr(pos + kMarker.size()));
  std::smatch m;
  if (!std::regex_search(tail, m, numeral)) throw ParseError("no numeral after the final 'Score:' marker");
  return std::stod(m.str());
}

/// Wraps a text-producing judge. Each call yields one transcript per rubric
/// dimension; their parsed scores are averaged.
inline Judge make_transcript_judge(std::function<std::vector<std::string>(const Prompt&, const Response&)> produce,
                                   ScoreRange range = {}) {
  return Judge(Judge::Kind::Transcript, range, [produce = std::move(produce)](const Prompt& x, const Response& y) {
    const auto transcripts = produce(x, y);
    if (transcripts.empty()) throw ParseError("judge produced no transcripts");
    double sum = 0.0;
    for (const auto& t : transcripts) sum += parse_judge_score(t);
    return sum / static_cast<double>(transcripts.size());
  });
}

struct ScoredSample {
  Prompt prompt;
  Response response;
  double score = 0.0;
  SourceTag source = SourceTag::base();
  bool operator==(const ScoredSample&) const = default;
};

struct TauResult {
  double tau = 0.0;
  std::vector<ScoredSample> samples;
};

enum : std::uint64_t { kTagTauSample = 11, kTagPairing = 12 };

/// Samples n_per_prompt base responses per prompt, scores them, and returns
/// tau = mean score together with the scored samples.
inline TauResult compute_tau(const TabularPolicy& base, const SeqSpec& spec, const PromptSet& prompts,
                             const Judge& judge, int n_per_prompt, std::uint64_t seed) {
  if (prompts.prompts.empty()) throw InputError("prompt set is empty");
  if (n_per_prompt < 1) throw InputError("n_per_prompt must be >= 1");
  TauResult out;
  double sum = 0.0;
  std::size_t slot = 0;
  for (const auto& x : prompts.prompts) {
    for (int j = 0; j < n_per_prompt; ++j, ++slot) {
      Rng rng(derive_seed(seed, kTagTauSample, slot));
      Response y = sample_response(base, spec, x, rng);
      const double s = judge.score(x, y);
      sum += s;
      out.samples.push_back({x, std::move(y), s, SourceTag::base()});
    }
  }
  out.tau = sum / static_cast<double>(out.samples.size());
  return out;
}

inline double mean_score(const std::vector<ScoredSample>& samples) {
  if (samples.empty()) throw InputError("no scored samples");
  double sum = 0.0;
  for (const auto& s : samples) sum += s.score;
  return sum / static_cast<double>(samples.size());
}

/// Appends scored samples to the chosen side when score > tau, otherwise to
/// the rejected side.
inline InstructionDatasets expand_datasets(InstructionDatasets d, const std::vector<ScoredSample>& scored, double tau) {
  for (const auto& s : scored) {
    auto& side = s.score > tau ? d.chosen : d.rejected;
    side.push_back({s.prompt, s.response, s.source});
  }
  return d;
}

/// Per prompt, up to max_pairs_per_prompt distinct (chosen record, rejected
/// record) combinations drawn uniformly without replacement. Combinations with
/// identical responses are never emitted.
inline PreferenceDataset build_preference_pairs(const InstructionDatasets& d, std::uint64_t seed,
                                                int max_pairs_per_prompt) {
  if (max_pairs_per_prompt < 1) throw InputError("max_pairs_per_prompt must be >= 1");
  if (d.chosen.empty() || d.rejected.empty()) throw EmptyDatasetError("chosen or rejected pool is empty");
  std::map<Prompt, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < d.chosen.size(); ++i) groups[d.chosen[i].prompt].first.push_back(i);
  for (std::size_t i = 0; i < d.rejected.size(); ++i) groups[d.rejected[i].prompt].second.push_back(i);

  PreferenceDataset out;
  std::uint64_t group_index = 0;
  for (const auto& [prompt, sides] : groups) {
    const auto& [w_idx, l_idx] = sides;
    ++group_index;
    if (w_idx.empty() || l_idx.empty()) continue;
    std::vector<std::pair<std::size_t, std::size_t>> combos;
    combos.reserve(w_idx.size() * l_idx.size());
    for (std::size_t a : w_idx)
      for (std::size_t b : l_idx)
        if (d.chosen[a].response != d.rejected[b].response) combos.emplace_back(a, b);
    Rng rng(derive_seed(seed, kTagPairing, group_index));
    const std::size_t take = std::min(combos.size(), static_cast<std::size_t>(max_pairs_per_prompt));
    // Partial Fisher-Yates: the first `take` slots become a uniform sample.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(combos.size() - i));
      std::swap(combos[i], combos[j]);
      const auto& w = d.chosen[combos[i].first];
      const auto& l = d.rejected[combos[i].second];
      out.push_back({prompt, w.response, l.response, w.source, l.source});
    }
  }
  if (out.empty()) throw EmptyDatasetError("no preference pairs could be formed");
  return out;
}

}  // namespace tso

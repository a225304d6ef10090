#pragma once

/*
 * Model matrix: policies indexed by (version, size), plus the human policy
 * and a designated base coordinate.
 *
 * Chosen responses come from the newest-and-largest entry and the human
 * policy. Rejected responses come from a configurable subset of weaker
 * entries. Mixtures pick one source by weight, then sample one response.
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tso/error.hpp"
#include "tso/policy_io.hpp"
#include "tso/preference.hpp"
#include "tso/random.hpp"
#include "tso/seq.hpp"

namespace tso {

struct ModelMatrix {
  std::map<ModelId, TabularPolicy> entries;
  TabularPolicy human;
  ModelId base_id{};
  SeqSpec spec{};

  void validate() const {
    if (entries.empty()) throw ConfigError("model matrix has no entries");
    if (!entries.contains(base_id)) throw ConfigError("base entry not present in the model matrix");
    for (const auto& [id, p] : entries) {
      if (id.version < 1 || id.size < 1) throw ConfigError("model ordinals must be >= 1");
      if (!(p.vocab() == human.vocab()) || p.order() != human.order())
        throw ConfigError("matrix entry " + to_string(SourceTag::model(id)) + " differs in shape from the human policy");
    }
  }

  const TabularPolicy& base() const { return entries.at(base_id); }

  const TabularPolicy& resolve(const SourceTag& s) const {
    switch (s.kind) {
      case SourceTag::Kind::Human: return human;
      case SourceTag::Kind::Base: return base();
      case SourceTag::Kind::Model: break;
    }
    auto it = entries.find(s.id);
    if (it == entries.end()) throw ConfigError("no matrix entry " + to_string(s));
    return it->second;
  }

  int max_version() const {
    int m = 0;
    for (const auto& [id, _] : entries) m = std::max(m, id.version);
    return m;
  }
  int max_size() const {
    int m = 0;
    for (const auto& [id, _] : entries) m = std::max(m, id.size);
    return m;
  }
};

/// {entry(v_max, s_max), HUMAN}.
inline std::vector<SourceTag> chosen_set(const ModelMatrix& m) {
  const ModelId top{m.max_version(), m.max_size()};
  if (!m.entries.contains(top))
    throw ConfigError("ragged matrix: no entry at (v_max, s_max) = " + to_string(SourceTag::model(top)));
  return {SourceTag::model(top), SourceTag::human()};
}

struct RejectedSelector {
  enum class Mode { StrictAnd, WeakerOr, SelfOnly, Explicit };
  Mode mode = Mode::WeakerOr;
  std::vector<ModelId> explicit_ids;
};

inline std::string to_string(RejectedSelector::Mode m) {
  switch (m) {
    case RejectedSelector::Mode::StrictAnd: return "strict_and";
    case RejectedSelector::Mode::WeakerOr: return "weaker_or";
    case RejectedSelector::Mode::SelfOnly: return "self_only";
    case RejectedSelector::Mode::Explicit: return "explicit";
  }
  return "?";
}

inline RejectedSelector::Mode parse_rejected_mode(std::string_view s) {
  if (s == "strict_and") return RejectedSelector::Mode::StrictAnd;
  if (s == "weaker_or") return RejectedSelector::Mode::WeakerOr;
  if (s == "self_only") return RejectedSelector::Mode::SelfOnly;
  if (s == "explicit") return RejectedSelector::Mode::Explicit;
  throw ConfigError("unknown rejected-set mode '" + std::string(s) + "'");
}

inline std::vector<SourceTag> rejected_set(const ModelMatrix& m, const RejectedSelector& sel) {
  const ModelId b = m.base_id;
  std::vector<SourceTag> out;
  switch (sel.mode) {
    case RejectedSelector::Mode::StrictAnd:
      for (const auto& [id, _] : m.entries)
        if (id.version < b.version && id.size < b.size) out.push_back(SourceTag::model(id));
      break;
    case RejectedSelector::Mode::WeakerOr:
      for (const auto& [id, _] : m.entries)
        if (id != b && (id.version < b.version || id.size < b.size)) out.push_back(SourceTag::model(id));
      break;
    case RejectedSelector::Mode::SelfOnly:
      out.push_back(SourceTag::model(b));
      break;
    case RejectedSelector::Mode::Explicit:
      for (const auto& id : sel.explicit_ids) {
        if (!m.entries.contains(id)) throw ConfigError("explicit rejected source " + to_string(SourceTag::model(id)) + " not in matrix");
        out.push_back(SourceTag::model(id));
      }
      break;
  }
  if (out.empty()) throw ConfigError("rejected set is empty under mode " + to_string(sel.mode));
  return out;
}

struct MixtureComponent {
  SourceTag source;
  double weight = 0.0;
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;

  void validate() const {
    if (components.empty()) throw InputError("mixture has no components");
    double sum = 0.0;
    for (const auto& c : components) {
      if (!(c.weight >= 0.0)) throw InputError("mixture weight must be >= 0");
      sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InputError("mixture weights sum to " + format_double(sum) + ", not 1");
  }

  static MixtureSpec uniform(const std::vector<SourceTag>& sources) {
    MixtureSpec m;
    const double w = 1.0 / static_cast<double>(sources.size());
    for (const auto& s : sources) m.components.push_back({s, w});
    return m;
  }
};

struct InstructionRecord {
  Prompt prompt;
  Response response;
  SourceTag source;
  bool operator==(const InstructionRecord&) const = default;
};

using InstructionDataset = std::vector<InstructionRecord>;

struct PromptSet {
  std::vector<Prompt> prompts;
  std::vector<double> weights;  // empty means uniform

  void validate() const {
    if (prompts.empty()) throw InputError("prompt set is empty");
    if (!weights.empty()) {
      if (weights.size() != prompts.size()) throw InputError("prompt weights do not match prompt count");
      double sum = 0.0;
      for (double w : weights) sum += w;
      if (std::abs(sum - 1.0) > 1e-12) throw InputError("prompt weights do not sum to 1");
    }
  }
  bool uniform() const { return weights.empty(); }
};

struct MixtureDraw {
  Response response;
  SourceTag source;
};

inline MixtureDraw mixture_sample(const ModelMatrix& m, const MixtureSpec& spec, const Prompt& x, Rng& rng) {
  spec.validate();
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t pick = spec.components.size();
  for (std::size_t i = 0; i < spec.components.size(); ++i) {
    acc += spec.components[i].weight;
    if (u < acc) {
      pick = i;
      break;
    }
  }
  if (pick == spec.components.size()) {
    pick = spec.components.size() - 1;
    while (pick > 0 && spec.components[pick].weight == 0.0) --pick;
  }
  const SourceTag& src = spec.components[pick].source;
  return {sample_response(m.resolve(src), m.spec, x, rng), src};
}

namespace detail {

inline void require_subset(const MixtureSpec& spec, const std::vector<SourceTag>& allowed, const char* what) {
  for (const auto& c : spec.components)
    if (c.weight > 0.0 && std::find(allowed.begin(), allowed.end(), c.source) == allowed.end())
      throw ConfigError(std::string(what) + " mixture uses source " + to_string(c.source) + " outside its model set");
}

inline std::size_t draw_index(std::span<const double> weights, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

}  // namespace detail

struct InstructionDatasets {
  InstructionDataset chosen;
  InstructionDataset rejected;
};

/// Dataset tags keep the chosen and rejected streams independent.
enum : std::uint64_t { kTagChosen = 1, kTagRejected = 2, kTagPromptDraw = 3 };

/// n_per_prompt mixture draws per prompt slot into each dataset. With uniform
/// prompt weights every prompt gets exactly n_per_prompt draws; otherwise the
/// |prompts| * n_per_prompt prompts are drawn from the weights.
inline InstructionDatasets build_instruction_datasets(const ModelMatrix& m, const PromptSet& prompts,
                                                      const MixtureSpec& w_spec, const MixtureSpec& l_spec,
                                                      const RejectedSelector& rejected, int n_per_prompt,
                                                      std::uint64_t seed) {
  m.validate();
  prompts.validate();
  w_spec.validate();
  l_spec.validate();
  if (n_per_prompt < 1) throw InputError("n_per_prompt must be >= 1");
  detail::require_subset(w_spec, chosen_set(m), "chosen");
  detail::require_subset(l_spec, rejected_set(m, rejected), "rejected");

  const std::size_t n_prompts = prompts.prompts.size();
  const std::size_t total = n_prompts * static_cast<std::size_t>(n_per_prompt);
  std::vector<std::size_t> slots(total);
  if (prompts.uniform()) {
    for (std::size_t i = 0; i < total; ++i) slots[i] = i / static_cast<std::size_t>(n_per_prompt);
  } else {
    Rng rng(derive_seed(seed, kTagPromptDraw));
    for (auto& s : slots) s = detail::draw_index(prompts.weights, rng);
  }

  InstructionDatasets out;
  out.chosen.reserve(total);
  out.rejected.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const Prompt& x = prompts.prompts[slots[i]];
    Rng rw(derive_seed(seed, kTagChosen, i));
    auto dw = mixture_sample(m, w_spec, x, rw);
    out.chosen.push_back({x, std::move(dw.response), dw.source});
    Rng rl(derive_seed(seed, kTagRejected, i));
    auto dl = mixture_sample(m, l_spec, x, rl);
    out.rejected.push_back({x, std::move(dl.response), dl.source});
  }
  return out;
}

/// Entry (v, s) gets logits lambda * truth: lambda = 1 is the truth itself,
/// lambda = 0 is the uniform policy. The human policy is the truth.
inline ModelMatrix make_quality_matrix(const TabularPolicy& truth, const SeqSpec& spec,
                                       const std::map<ModelId, double>& grid, ModelId base_id) {
  ModelMatrix m;
  m.human = truth;
  m.base_id = base_id;
  m.spec = spec;
  for (const auto& [id, lambda] : grid) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw InputError("quality lambda " + format_double(lambda) + " outside [0, 1] at " + to_string(SourceTag::model(id)));
    std::vector<double> logits = truth.logits();
    for (double& v : logits) v *= lambda;
    m.entries.emplace(id, TabularPolicy(truth.vocab(), truth.order(), std::move(logits)));
  }
  m.validate();
  return m;
}

inline std::string serialize_instructions(const InstructionDataset& d) {
  std::string out;
  for (const auto& r : d)
    out += "prompt=" + join_tokens(r.prompt.tokens) + " response=" + join_tokens(r.response.tokens) +
           " source=" + to_string(r.source) + "\n";
  return out;
}

inline InstructionDataset parse_instructions(std::string_view text) {
  InstructionDataset d;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    d.push_back({Prompt{split_tokens(field(line, "prompt"))}, Response{split_tokens(field(line, "response"))},
                 parse_source_tag(field(line, "source"))});
  }
  return d;
}

}  // namespace tso

#pragma once

/*
 * Synthetic worlds: a random truth policy, a prompt set, and a quality-graded
 * model matrix derived from the truth.
 */

#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <vector>

#include "tso/matrix.hpp"
#include "tso/random.hpp"
#include "tso/seq.hpp"

namespace tso {

struct WorldConfig {
  int vocab = 8;
  int max_len = 4;
  int order = 1;
  int prompts = 32;
  int prompt_len = 2;
  double truth_scale = 2.0;  // std-dev of the truth logits
  std::map<ModelId, double> grid;
  ModelId base_id{2, 2};
  std::uint64_t seed = 43;

  void validate() const {
    Vocabulary{vocab, 0}.validate();
    SeqSpec{max_len}.validate();
    if (order < 0) throw ConfigError("order must be >= 0");
    if (prompts < 1) throw ConfigError("prompts must be >= 1");
    if (prompt_len < 0) throw ConfigError("prompt_len must be >= 0");
    if (std::pow(static_cast<double>(vocab), prompt_len) < static_cast<double>(prompts))
      throw ConfigError("cannot draw " + std::to_string(prompts) + " distinct prompts of length " +
                        std::to_string(prompt_len));
    if (!(truth_scale >= 0)) throw ConfigError("truth_scale must be >= 0");
    if (grid.empty()) throw ConfigError("lambda grid is empty");
    if (!grid.contains(base_id)) throw ConfigError("base coordinate is not on the lambda grid");
  }
};

struct World {
  SeqSpec spec;
  TabularPolicy truth;
  PromptSet prompts;
  ModelMatrix matrix;
};

/// Standard normal via Box-Muller on the library's own uniform draws.
inline double standard_normal(Rng& rng) {
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

enum : std::uint64_t { kTagTruth = 41, kTagPrompts = 42 };

inline TabularPolicy random_policy(Vocabulary vocab, int order, double scale, std::uint64_t seed) {
  TabularPolicy p(vocab, order);
  Rng rng(seed);
  for (double& v : p.logits()) v = scale * standard_normal(rng);
  return p;
}

inline World make_world(const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.spec = SeqSpec{cfg.max_len};
  const Vocabulary vocab{cfg.vocab, 0};
  w.truth = random_policy(vocab, cfg.order, cfg.truth_scale, derive_seed(cfg.seed, kTagTruth));
  // Distinct prompts, drawn by rejection.
  Rng rng(derive_seed(cfg.seed, kTagPrompts));
  std::set<Prompt> seen;
  while (w.prompts.prompts.size() < static_cast<std::size_t>(cfg.prompts)) {
    Prompt x;
    for (int j = 0; j < cfg.prompt_len; ++j) x.tokens.push_back(static_cast<Token>(rng.below(static_cast<std::uint64_t>(cfg.vocab))));
    if (seen.insert(x).second) w.prompts.prompts.push_back(std::move(x));
  }
  w.matrix = make_quality_matrix(w.truth, w.spec, cfg.grid, cfg.base_id);
  return w;
}

}  // namespace tso

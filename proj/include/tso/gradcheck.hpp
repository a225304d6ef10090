#pragma once

/*
 * Finite-difference and closed-form self checks for the loss and policy
 * gradients.
 */

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "tso/losses.hpp"
#include "tso/preference.hpp"
#include "tso/random.hpp"
#include "tso/seq.hpp"
#include "tso/trainer.hpp"
#include "tso/world.hpp"

namespace tso {

/// Componentwise |a - f| / max(|a|, |f|, floor). The floor keeps entries that
/// are zero up to rounding from dominating the maximum.
inline constexpr double kRelErrorFloor = 1e-4;

inline double relative_error(double analytic, double numeric, double floor = kRelErrorFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradcheckResult {
  double max_rel_error = 0.0;
  int instances = 0;
  long coordinates = 0;
};

enum : std::uint64_t { kTagGcPolicy = 61, kTagGcRef = 62, kTagGcBatch = 63, kTagGcNorm = 64 };

namespace detail {

inline Prompt random_prompt(const Vocabulary& v, int len, Rng& rng) {
  Prompt x;
  for (int i = 0; i < len; ++i) x.tokens.push_back(static_cast<Token>(rng.below(static_cast<std::uint64_t>(v.size))));
  return x;
}

// Distance from the nearest hinge kink over a batch; infinity for smooth losses.
inline double kink_distance(LossKind kind, const TabularPolicy& p, const TabularPolicy& ref, const SeqSpec& spec,
                            const PreferenceDataset& batch, const LossConfig& cfg) {
  if (kind != LossKind::DualClip) return std::numeric_limits<double>::infinity();
  double d = std::numeric_limits<double>::infinity();
  for (const auto& pair : batch) {
    const auto r = pair_log_ratios(p, ref, spec, pair);
    d = std::min({d, std::abs(cfg.gamma_w - cfg.beta * r.delta_w), std::abs(cfg.gamma_l + cfg.beta * r.delta_l)});
  }
  return d;
}

}  // namespace detail

/// Central differences of the mean batch loss against batch_loss_and_grad on
/// random policies, references and batches of 1 to 4 pairs. Instances that
/// land within 1e-3 of a dual-clip kink are redrawn.
inline GradcheckResult gradcheck_loss(LossKind kind, const LossConfig& cfg, int instances, int vocab, int max_len,
                                      double h, std::uint64_t seed) {
  const Vocabulary v{vocab, 0};
  const SeqSpec spec{max_len};
  const auto responses = enumerate_responses(spec, v);
  GradcheckResult out;
  std::uint64_t draw = 0;
  while (out.instances < instances) {
    ++draw;
    TabularPolicy p = random_policy(v, 1, 1.0, derive_seed(seed, kTagGcPolicy, static_cast<std::uint64_t>(kind), draw));
    const TabularPolicy ref = random_policy(v, 1, 1.0, derive_seed(seed, kTagGcRef, static_cast<std::uint64_t>(kind), draw));
    Rng rng(derive_seed(seed, kTagGcBatch, static_cast<std::uint64_t>(kind), draw));
    PreferenceDataset batch;
    const auto n_pairs = 1 + rng.below(4);
    for (std::uint64_t i = 0; i < n_pairs; ++i) {
      PreferencePair pair;
      pair.prompt = detail::random_prompt(v, 2, rng);
      pair.chosen = responses[rng.below(responses.size())];
      do {
        pair.rejected = responses[rng.below(responses.size())];
      } while (pair.rejected == pair.chosen);
      batch.push_back(std::move(pair));
    }
    if (detail::kink_distance(kind, p, ref, spec, batch, cfg) < 1e-3) continue;

    const auto analytic = batch_loss_and_grad(p, ref, spec, batch, kind, cfg).grad.values;
    auto& theta = p.logits();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double up = batch_loss_and_grad(p, ref, spec, batch, kind, cfg).mean_loss;
      theta[i] = saved - h;
      const double down = batch_loss_and_grad(p, ref, spec, batch, kind, cfg).mean_loss;
      theta[i] = saved;
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], (up - down) / (2.0 * h)));
      ++out.coordinates;
    }
    ++out.instances;
  }
  return out;
}

/// Same comparison for log_prob_grad of single (prompt, response) pairs.
inline GradcheckResult gradcheck_log_prob(int instances, int vocab, int max_len, int order, double h,
                                          std::uint64_t seed) {
  const Vocabulary v{vocab, 0};
  const SeqSpec spec{max_len};
  const auto responses = enumerate_responses(spec, v);
  GradcheckResult out;
  for (int k = 0; k < instances; ++k) {
    const auto kk = static_cast<std::uint64_t>(k);
    TabularPolicy p = random_policy(v, order, 1.0, derive_seed(seed, kTagGcPolicy, kk));
    Rng rng(derive_seed(seed, kTagGcBatch, kk));
    const Prompt x = detail::random_prompt(v, 2, rng);
    const Response& y = responses[rng.below(responses.size())];
    const auto analytic = log_prob_grad(p, spec, x, y).values;
    auto& theta = p.logits();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double up = log_prob(p, spec, x, y);
      theta[i] = saved - h;
      const double down = log_prob(p, spec, x, y);
      theta[i] = saved;
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], (up - down) / (2.0 * h)));
      ++out.coordinates;
    }
    ++out.instances;
  }
  return out;
}

/// Largest |sum_y p(y|x) - 1| over `policies` random policies and a few
/// prompts each.
inline double normalization_error(int policies, int vocab, int max_len, std::uint64_t seed) {
  const Vocabulary v{vocab, 0};
  const SeqSpec spec{max_len};
  const auto responses = enumerate_responses(spec, v);
  double worst = 0.0;
  for (int k = 0; k < policies; ++k) {
    const auto kk = static_cast<std::uint64_t>(k);
    const TabularPolicy p = random_policy(v, 1, 2.0, derive_seed(seed, kTagGcNorm, kk));
    Rng rng(derive_seed(seed, kTagGcBatch, kk));
    for (int j = 0; j < 4; ++j) {
      const Prompt x = detail::random_prompt(v, 2, rng);
      double sum = 0.0;
      for (const auto& y : responses) sum += std::exp(log_prob(p, spec, x, y));
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return worst;
}

/// dpo(0,0) = log 2, dual clip at zero ratios = gamma_w + gamma_l, ipo at h = 0
/// with tau 0.2 is 6.25, cdpo at h = 0 is log 2 for any epsilon, and cdpo with
/// epsilon = 0 equals dpo on 1000 random margins.
inline bool closed_form_losses_hold(std::uint64_t seed) {
  const PairLogRatios zero{0.0, 0.0};
  bool ok = dpo_loss(zero, 0.1) == std::numbers::ln2;
  ok = ok && dual_clip_loss(zero, LossConfig{0.1, 20.0, 10.0, 0.3, 0.2}) == 30.0;
  ok = ok && ipo_loss(zero, 0.1, 0.2) == 6.25;
  for (double eps : {0.0, 0.1, 0.3, 0.49}) ok = ok && std::abs(cdpo_loss(zero, 0.1, eps) - std::numbers::ln2) <= 1e-15;
  Rng rng(seed);
  for (int i = 0; i < 1000; ++i) {
    const PairLogRatios r{40.0 * rng.uniform() - 20.0, 40.0 * rng.uniform() - 20.0};
    ok = ok && std::abs(cdpo_loss(r, 1.0, 0.0) - dpo_loss(r, 1.0)) <= 1e-15;
  }
  return ok;
}

struct DecouplingResult {
  bool rejected_partials_zero = false;
  bool gradient_is_chosen_only = false;
  double chosen_reward_before = 0.0;
  double chosen_reward_after = 0.0;
  bool holds() const {
    return rejected_partials_zero && gradient_is_chosen_only && chosen_reward_after > chosen_reward_before;
  }
};

/// A batch whose rejected rewards all sit at or below -gamma_l: the policy
/// pushes the rejected token to logit -60 while the reference stays uniform.
/// Checks that the rejected side contributes nothing to the gradient and that
/// one optimizer step raises the mean chosen reward.
inline DecouplingResult dual_clip_decoupling(const LossConfig& cfg) {
  const Vocabulary v{4, 0};
  const SeqSpec spec{3};
  const TabularPolicy ref(v, 1);
  TabularPolicy p(v, 1);
  for (std::size_t c = 0; c < p.num_contexts(); ++c) p.row(c)[1] = -60.0;
  const Prompt x1{{2, 3}}, x2{{3, 3}};
  const PreferenceDataset batch{
      {x1, Response{{2, 0}}, Response{{1, 1, 0}}, SourceTag::human(), SourceTag::model({1, 1})},
      {x2, Response{{3, 2, 0}}, Response{{1, 1, 1}}, SourceTag::human(), SourceTag::model({1, 1})},
      {x1, Response{{3, 0}}, Response{{1, 1, 2}}, SourceTag::human(), SourceTag::model({1, 1})},
  };
  DecouplingResult out;
  out.rejected_partials_zero = true;
  PolicyGradient chosen_only(p);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& pair : batch) {
    const auto r = pair_log_ratios(p, ref, spec, pair);
    if (cfg.beta * r.delta_l > -cfg.gamma_l) return out;  // construction failed to clip
    const auto d = loss_partials(LossKind::DualClip, r, cfg);
    out.rejected_partials_zero = out.rejected_partials_zero && d.delta_l == 0.0;
    if (d.delta_w != 0.0) accumulate_log_prob_grad(p, spec, pair.prompt, pair.chosen, d.delta_w * inv_n, chosen_only);
  }
  const auto res = batch_loss_and_grad(p, ref, spec, batch, LossKind::DualClip, cfg);
  out.gradient_is_chosen_only = res.grad.values == chosen_only.values;
  out.chosen_reward_before = res.mean_reward_w();

  TrainConfig tc;
  tc.lr = 0.01;
  tc.weight_decay = 0.0;
  tc.warmup_frac = 0.0;
  TrainState state(p, 100);
  state = adam_step(std::move(state), res.grad, tc);
  out.chosen_reward_after = batch_loss_and_grad(state.policy, ref, spec, batch, LossKind::DualClip, cfg).mean_reward_w();
  return out;
}

}  // namespace tso

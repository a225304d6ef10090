#pragma once

/*
 * Preference losses on policy/reference log-ratios.
 *
 * Each pair contributes through two log-ratios,
 *   delta_w = log pi(y_w|x) - log ref(y_w|x),
 *   delta_l = log pi(y_l|x) - log ref(y_l|x),
 * and h = beta * (delta_w - delta_l). Every loss here is the minimized form.
 *
 *   DPO        softplus(-h)
 *   DUAL_CLIP  max(0, gamma_w - beta*delta_w) + max(0, gamma_l + beta*delta_l)
 *   IPO        (h - 1/(2 tau))^2
 *   CDPO       (1-eps) softplus(-h) + eps softplus(h)
 */

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tso/error.hpp"
#include "tso/preference.hpp"
#include "tso/seq.hpp"

namespace tso {

struct LossConfig {
  double beta = 0.1;
  double gamma_w = 20.0;
  double gamma_l = 10.0;
  double epsilon = 0.3;
  double tau_ipo = 0.2;

  void validate() const {
    if (!(beta > 0)) throw ConfigError("beta must be > 0");
    if (!(gamma_w > 0)) throw ConfigError("gamma_w must be > 0");
    if (!(gamma_l > 0)) throw ConfigError("gamma_l must be > 0");
    if (!(epsilon >= 0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in [0, 0.5)");
    if (!(tau_ipo > 0)) throw ConfigError("tau_ipo must be > 0");
  }
};

struct PairLogRatios {
  double delta_w = 0.0;
  double delta_l = 0.0;
};

enum class LossKind { Dpo, DualClip, Ipo, Cdpo };

inline constexpr LossKind kAllLossKinds[] = {LossKind::Dpo, LossKind::DualClip, LossKind::Ipo, LossKind::Cdpo};

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Dpo: return "dpo";
    case LossKind::DualClip: return "dual_clip";
    case LossKind::Ipo: return "ipo";
    case LossKind::Cdpo: return "cdpo";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "dpo") return LossKind::Dpo;
  if (s == "dual_clip") return LossKind::DualClip;
  if (s == "ipo") return LossKind::Ipo;
  if (s == "cdpo") return LossKind::Cdpo;
  throw ConfigError("unknown loss kind '" + std::string(s) + "'");
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline double implicit_reward(double delta, double beta) { return beta * delta; }

inline double margin(const PairLogRatios& r, double beta) { return beta * (r.delta_w - r.delta_l); }

inline double dpo_loss(const PairLogRatios& r, double beta) { return softplus(-margin(r, beta)); }

inline double dual_clip_loss(const PairLogRatios& r, const LossConfig& cfg) {
  return std::max(0.0, cfg.gamma_w - cfg.beta * r.delta_w) + std::max(0.0, cfg.gamma_l + cfg.beta * r.delta_l);
}

inline double ipo_loss(const PairLogRatios& r, double beta, double tau_ipo) {
  const double d = margin(r, beta) - 1.0 / (2.0 * tau_ipo);
  return d * d;
}

inline double cdpo_loss(const PairLogRatios& r, double beta, double epsilon) {
  const double h = margin(r, beta);
  return (1.0 - epsilon) * softplus(-h) + epsilon * softplus(h);
}

/// Multiplier on the DPO gradient, sigma(-h). Equals 0.5 when the policy
/// matches the reference on the pair and shrinks as the margin grows.
inline double grad_scale_s(const PairLogRatios& r, double beta) { return sigmoid(-margin(r, beta)); }

inline double loss_value(LossKind kind, const PairLogRatios& r, const LossConfig& cfg) {
  switch (kind) {
    case LossKind::Dpo: return dpo_loss(r, cfg.beta);
    case LossKind::DualClip: return dual_clip_loss(r, cfg);
    case LossKind::Ipo: return ipo_loss(r, cfg.beta, cfg.tau_ipo);
    case LossKind::Cdpo: return cdpo_loss(r, cfg.beta, cfg.epsilon);
  }
  return 0.0;
}

/// Partial derivatives of the per-pair loss with respect to (delta_w, delta_l).
/// Hinges use a zero subgradient exactly at the kink.
inline PairLogRatios loss_partials(LossKind kind, const PairLogRatios& r, const LossConfig& cfg) {
  const double b = cfg.beta;
  double dh = 0.0;
  switch (kind) {
    case LossKind::Dpo:
      dh = -sigmoid(-margin(r, b));
      break;
    case LossKind::Cdpo: {
      const double h = margin(r, b);
      dh = -(1.0 - cfg.epsilon) * sigmoid(-h) + cfg.epsilon * sigmoid(h);
      break;
    }
    case LossKind::Ipo:
      dh = 2.0 * (margin(r, b) - 1.0 / (2.0 * cfg.tau_ipo));
      break;
    case LossKind::DualClip:
      return {cfg.gamma_w - b * r.delta_w > 0.0 ? -b : 0.0, cfg.gamma_l + b * r.delta_l > 0.0 ? b : 0.0};
  }
  return {b * dh, -b * dh};
}

struct PairTelemetry {
  double loss = 0.0;
  double reward_w = 0.0;
  double reward_l = 0.0;
  double s = 0.5;
};

struct BatchResult {
  double mean_loss = 0.0;
  PolicyGradient grad;
  std::vector<PairTelemetry> pairs;

  double mean_reward_w() const { return mean_of(&PairTelemetry::reward_w); }
  double mean_reward_l() const { return mean_of(&PairTelemetry::reward_l); }
  double mean_s() const { return mean_of(&PairTelemetry::s); }

 private:
  double mean_of(double PairTelemetry::*m) const {
    double acc = 0.0;
    for (const auto& p : pairs) acc += p.*m;
    return pairs.empty() ? 0.0 : acc / static_cast<double>(pairs.size());
  }
};

inline PairLogRatios pair_log_ratios(const TabularPolicy& policy, const TabularPolicy& ref, const SeqSpec& spec,
                                     const PreferencePair& p) {
  return {log_prob(policy, spec, p.prompt, p.chosen) - log_prob(ref, spec, p.prompt, p.chosen),
          log_prob(policy, spec, p.prompt, p.rejected) - log_prob(ref, spec, p.prompt, p.rejected)};
}

/// Mean loss over the batch and its exact gradient with respect to the
/// policy logits. Pairs are reduced in input order.
inline BatchResult batch_loss_and_grad(const TabularPolicy& policy, const TabularPolicy& ref, const SeqSpec& spec,
                                       std::span<const PreferencePair> batch, LossKind kind, const LossConfig& cfg) {
  if (batch.empty()) throw InputError("empty preference batch");
  if (!(policy.vocab() == ref.vocab()) || policy.order() != ref.order())
    throw InputError("policy and reference shapes differ");
  BatchResult out;
  out.grad = PolicyGradient(policy);
  out.pairs.reserve(batch.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& p : batch) {
    const PairLogRatios r = pair_log_ratios(policy, ref, spec, p);
    const double loss = loss_value(kind, r, cfg);
    const PairLogRatios d = loss_partials(kind, r, cfg);
    if (d.delta_w != 0.0) accumulate_log_prob_grad(policy, spec, p.prompt, p.chosen, d.delta_w * inv_n, out.grad);
    if (d.delta_l != 0.0) accumulate_log_prob_grad(policy, spec, p.prompt, p.rejected, d.delta_l * inv_n, out.grad);
    total += loss;
    out.pairs.push_back({loss, implicit_reward(r.delta_w, cfg.beta), implicit_reward(r.delta_l, cfg.beta),
                         grad_scale_s(r, cfg.beta)});
  }
  out.mean_loss = total * inv_n;
  return out;
}

}  // namespace tso

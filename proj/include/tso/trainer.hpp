#pragma once

/*
 * Optimizer and training loops.
 *
 *   adam_step                 one AdamW update with global-norm clipping and a
 *                             cosine-with-warmup schedule that reaches zero on
 *                             the final scheduled step
 *   train_on_minibatch        epochs of shuffled batches on one shard
 *   mini_batch_iterative_dpo  T shards, reference re-snapshotted before each
 *   tso_outer_loop            N stages of data rebuild + iterative training
 */

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tso/error.hpp"
#include "tso/judge.hpp"
#include "tso/losses.hpp"
#include "tso/matrix.hpp"
#include "tso/preference.hpp"
#include "tso/random.hpp"
#include "tso/seq.hpp"

namespace tso {

struct TrainConfig {
  LossKind loss = LossKind::Dpo;
  LossConfig loss_cfg{};
  double lr = 1e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 1.0;
  double warmup_frac = 0.03;
  int batch_size = 256;
  int epochs_per_minibatch = 2;
  int T = 3;
  int N = 3;
  std::uint64_t seed = 43;

  void validate() const {
    loss_cfg.validate();
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (T < 1) throw ConfigError("T must be >= 1");
    if (N < 1) throw ConfigError("N must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs_per_minibatch < 1) throw ConfigError("epochs must be >= 1");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
      throw ConfigError("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (!(grad_clip > 0)) throw ConfigError("grad_clip must be > 0");
    if (!(warmup_frac >= 0 && warmup_frac < 1)) throw ConfigError("warmup_frac must lie in [0, 1)");
  }
};

struct TrainState {
  TabularPolicy policy;
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  long total_steps = 1;

  TrainState() = default;
  TrainState(TabularPolicy p, long total)
      : policy(std::move(p)), m(policy.logits().size(), 0.0), v(policy.logits().size(), 0.0), total_steps(total) {}
};

struct TelemetryRecord {
  long step = 0;
  int iter = 1;
  int minibatch = 1;
  double loss = 0.0;
  double reward_w = 0.0;
  double reward_l = 0.0;
  double s = 0.5;
  double lr = 0.0;
  bool operator==(const TelemetryRecord&) const = default;
};

using TelemetryLog = std::vector<TelemetryRecord>;

/// Linear warmup over the first ceil(warmup_frac * total) steps, then cosine
/// decay that hits exactly zero at step total - 1.
inline double scheduled_lr(const TrainConfig& cfg, long step, long total) {
  if (total <= 1) return 0.0;
  const long warm = std::min(static_cast<long>(std::ceil(cfg.warmup_frac * static_cast<double>(total))), total - 1);
  if (step < warm) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (step >= total - 1) return 0.0;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - 1 - warm);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline TrainState adam_step(TrainState state, const PolicyGradient& grad, const TrainConfig& cfg) {
  auto& theta = state.policy.logits();
  if (grad.values.size() != theta.size() || state.m.size() != theta.size() || state.v.size() != theta.size())
    throw InputError("gradient or moment shape does not match the policy");
  double sq = 0.0;
  for (std::size_t i = 0; i < grad.values.size(); ++i) {
    const double g = grad.values[i];
    if (!std::isfinite(g))
      throw NumericalError("non-finite gradient entry " + std::to_string(i) + " at step " + std::to_string(state.step));
    sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double clip = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
  const double lr = scheduled_lr(cfg, state.step, state.total_steps);
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad.values[i] * clip;
    state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
    state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    theta[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * theta[i]);
  }
  ++state.step;
  return state;
}

enum : std::uint64_t { kTagPartition = 21, kTagEpoch = 22 };

/// Seeded shuffle then contiguous split; the first |d| mod T shards get one
/// extra pair.
inline std::vector<PreferenceDataset> partition_minibatches(const PreferenceDataset& d, int T, std::uint64_t seed) {
  if (T < 1) throw InputError("T must be >= 1");
  if (static_cast<std::size_t>(T) > d.size())
    throw InputError("cannot split " + std::to_string(d.size()) + " pairs into " + std::to_string(T) + " mini-batches");
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span(order));
  const std::size_t base = d.size() / static_cast<std::size_t>(T);
  const std::size_t extra = d.size() % static_cast<std::size_t>(T);
  std::vector<PreferenceDataset> shards(static_cast<std::size_t>(T));
  std::size_t pos = 0;
  for (std::size_t t = 0; t < shards.size(); ++t) {
    const std::size_t n = base + (t < extra ? 1 : 0);
    shards[t].reserve(n);
    for (std::size_t k = 0; k < n; ++k) shards[t].push_back(d[order[pos++]]);
  }
  return shards;
}

inline long steps_per_shard(std::size_t shard_size, const TrainConfig& cfg) {
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  return static_cast<long>((shard_size + b - 1) / b) * cfg.epochs_per_minibatch;
}

struct ShardContext {
  int iter = 1;
  int minibatch = 1;
};

/// epochs_per_minibatch passes over the shard in shuffled batches; one
/// telemetry record per optimizer step, measured before the update.
inline void train_on_minibatch(TrainState& state, const TabularPolicy& ref, const SeqSpec& spec,
                               const PreferenceDataset& shard, const TrainConfig& cfg, ShardContext where,
                               TelemetryLog& sink) {
  if (shard.empty()) throw InputError("empty mini-batch shard");
  std::vector<std::size_t> order(shard.size());
  std::vector<PreferencePair> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs_per_minibatch; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, kTagEpoch, static_cast<std::uint64_t>(where.iter),
                        static_cast<std::uint64_t>(where.minibatch), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(shard[order[k]]);
      const BatchResult r = batch_loss_and_grad(state.policy, ref, spec, batch, cfg.loss, cfg.loss_cfg);
      const double lr = scheduled_lr(cfg, state.step, state.total_steps);
      sink.push_back({state.step, where.iter, where.minibatch, r.mean_loss, r.mean_reward_w(), r.mean_reward_l(),
                      r.mean_s(), lr});
      state = adam_step(std::move(state), r.grad, cfg);
    }
  }
}

/// Splits d into T shards; before each shard the reference becomes a frozen
/// copy of the current policy. T = 1 is ordinary single-reference training.
/// Optimizer moments and the learning-rate schedule span the whole call.
inline TabularPolicy mini_batch_iterative_dpo(TabularPolicy policy, const SeqSpec& spec, const PreferenceDataset& d,
                                              const TrainConfig& cfg, int iter, TelemetryLog& sink,
                                              long step_offset = 0) {
  cfg.validate();
  const auto shards = partition_minibatches(d, cfg.T, derive_seed(cfg.seed, kTagPartition, static_cast<std::uint64_t>(iter)));
  long total = 0;
  for (const auto& s : shards) total += steps_per_shard(s.size(), cfg);
  TrainState state(std::move(policy), total);
  const std::size_t first_record = sink.size();
  for (std::size_t t = 0; t < shards.size(); ++t) {
    const TabularPolicy ref = state.policy;
    train_on_minibatch(state, ref, spec, shards[t], cfg, {iter, static_cast<int>(t) + 1}, sink);
  }
  for (std::size_t i = first_record; i < sink.size(); ++i) sink[i].step += step_offset;
  return std::move(state.policy);
}

/// How each stage's preference data is assembled from the matrix.
struct PipelineConfig {
  RejectedSelector rejected{};
  double human_weight = 0.5;
  int n_per_prompt = 10;             // matrix draws per prompt per side
  int base_samples_per_prompt = 10;  // base re-inference draws scored against tau
  int pairs_per_stage = 3000;
  bool evaluation_correction = true;
  bool regenerate_matrix_records = false;

  void validate() const {
    if (!(human_weight >= 0 && human_weight <= 1)) throw ConfigError("human_weight must lie in [0, 1]");
    if (n_per_prompt < 1) throw ConfigError("n_per_prompt must be >= 1");
    if (base_samples_per_prompt < 1) throw ConfigError("base_samples_per_prompt must be >= 1");
    if (pairs_per_stage < 1) throw ConfigError("pairs_per_stage must be >= 1");
  }
};

inline MixtureSpec chosen_mixture(const ModelMatrix& m, double human_weight) {
  const auto set = chosen_set(m);
  MixtureSpec w;
  w.components.push_back({set[0], 1.0 - human_weight});
  w.components.push_back({set[1], human_weight});
  return w;
}

struct StageData {
  double tau = 0.0;
  std::size_t scored = 0;
  InstructionDatasets expanded;
  PreferenceDataset pairs;
};

enum : std::uint64_t { kTagMatrixData = 31, kTagStageTau = 32, kTagStagePairs = 33, kTagBudget = 34 };

/// Keeps a uniformly chosen subset of at most `budget` pairs, in original order.
inline PreferenceDataset subsample_pairs(PreferenceDataset pairs, std::size_t budget, std::uint64_t seed) {
  if (pairs.size() <= budget) return pairs;
  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span(idx));
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  PreferenceDataset out;
  out.reserve(budget);
  for (std::size_t i : idx) out.push_back(std::move(pairs[i]));
  return out;
}

/// Builds one stage's preference pairs: matrix mixtures, then (optionally)
/// base re-inference scored against tau, then per-prompt pairing.
inline StageData build_stage_data(const ModelMatrix& m, const PromptSet& prompts, const Judge& judge,
                                  const PipelineConfig& pc, int stage, std::uint64_t seed) {
  pc.validate();
  const std::uint64_t data_seed =
      derive_seed(seed, kTagMatrixData, pc.regenerate_matrix_records ? static_cast<std::uint64_t>(stage) : 0);
  const MixtureSpec w_spec = chosen_mixture(m, pc.human_weight);
  const MixtureSpec l_spec = MixtureSpec::uniform(rejected_set(m, pc.rejected));
  StageData out;
  out.expanded = build_instruction_datasets(m, prompts, w_spec, l_spec, pc.rejected, pc.n_per_prompt, data_seed);
  if (pc.evaluation_correction) {
    auto tau = compute_tau(m.base(), m.spec, prompts, judge, pc.base_samples_per_prompt,
                           derive_seed(seed, kTagStageTau, static_cast<std::uint64_t>(stage)));
    out.tau = tau.tau;
    out.scored = tau.samples.size();
    out.expanded = expand_datasets(std::move(out.expanded), tau.samples, tau.tau);
  }
  const std::size_t n_prompts = prompts.prompts.size();
  const int per_prompt = static_cast<int>((static_cast<std::size_t>(pc.pairs_per_stage) + n_prompts - 1) / n_prompts);
  auto pairs = build_preference_pairs(out.expanded, derive_seed(seed, kTagStagePairs, static_cast<std::uint64_t>(stage)),
                                      per_prompt);
  out.pairs = subsample_pairs(std::move(pairs), static_cast<std::size_t>(pc.pairs_per_stage),
                              derive_seed(seed, kTagBudget, static_cast<std::uint64_t>(stage)));
  return out;
}

struct StageSummary {
  int stage = 0;
  double tau = 0.0;
  std::size_t pairs = 0;
};

/// N stages. Each stage re-infers the current base, rebuilds the expanded
/// pools and the preference pairs, trains with T reference switches, and
/// installs the result as the new base entry. Returns one policy per stage.
inline std::vector<TabularPolicy> tso_outer_loop(ModelMatrix matrix, const PromptSet& prompts, const Judge& judge,
                                                 const TrainConfig& cfg, const PipelineConfig& pc, TelemetryLog& sink,
                                                 std::vector<StageSummary>* summaries = nullptr) {
  cfg.validate();
  matrix.validate();
  std::vector<TabularPolicy> stages;
  long step_offset = 0;
  for (int n = 1; n <= cfg.N; ++n) {
    StageData data;
    try {
      data = build_stage_data(matrix, prompts, judge, pc, n, cfg.seed);
    } catch (const EmptyDatasetError& e) {
      throw EmptyDatasetError("stage " + std::to_string(n) + ": " + e.what());
    }
    if (summaries) summaries->push_back({n, data.tau, data.pairs.size()});
    const std::size_t before = sink.size();
    TabularPolicy updated = mini_batch_iterative_dpo(matrix.base(), matrix.spec, data.pairs, cfg, n, sink, step_offset);
    step_offset += static_cast<long>(sink.size() - before);
    matrix.entries.at(matrix.base_id) = updated;
    stages.push_back(std::move(updated));
  }
  return stages;
}

}  // namespace tso

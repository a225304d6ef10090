#pragma once

/*
 * Experiment commands and run directories.
 *
 * Every run directory holds config.json (the effective configuration), seed,
 * telemetry.csv, report.json, and whatever policies and datasets the command
 * produced. Commands with several training arms write one subdirectory per
 * arm under arms/, each with its own telemetry.csv and policy.txt; their
 * top-level telemetry.csv is header-only.
 */

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tso/analytics.hpp"
#include "tso/config.hpp"
#include "tso/error.hpp"
#include "tso/gradcheck.hpp"
#include "tso/judge.hpp"
#include "tso/losses.hpp"
#include "tso/matrix.hpp"
#include "tso/policy_io.hpp"
#include "tso/trainer.hpp"
#include "tso/world.hpp"

namespace tso {

enum class Command { Synth, Train, AblateNegsrc, AblateMinibatch, AblateLoss, Stats, Gradcheck };

inline constexpr Command kAllCommands[] = {Command::Synth,      Command::Train, Command::AblateNegsrc,
                                           Command::AblateMinibatch, Command::AblateLoss, Command::Stats,
                                           Command::Gradcheck};

inline std::string to_string(Command c) {
  switch (c) {
    case Command::Synth: return "synth";
    case Command::Train: return "train";
    case Command::AblateNegsrc: return "ablate_negsrc";
    case Command::AblateMinibatch: return "ablate_minibatch";
    case Command::AblateLoss: return "ablate_loss";
    case Command::Stats: return "stats";
    case Command::Gradcheck: return "gradcheck";
  }
  return "?";
}

/// Case-insensitive; '-' and '_' are interchangeable.
inline Command parse_command(std::string_view s) {
  std::string norm;
  for (char ch : s) norm += ch == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  for (Command c : kAllCommands)
    if (to_string(c) == norm) return c;
  throw ConfigError("unknown command '" + std::string(s) + "'");
}

/// Environment variable that replaces the configured output root.
inline constexpr const char* kOutputRootEnv = "TSO_LAB_OUT";

struct RunReport {
  Command command = Command::Synth;
  std::filesystem::path run_dir;
  Json metrics = Json::object();
  std::map<std::string, bool> flags;

  Json to_json() const {
    Json flag_doc = Json::object();
    for (const auto& [k, v] : flags) flag_doc[k] = v;
    return Json{{"command", to_string(command)}, {"metrics", metrics}, {"flags", flag_doc}};
  }
};

/// World, judge and paths shared by every command.
struct Experiment {
  World world;
  Judge judge;
  std::set<Prompt> ood_prompts;
};

enum : std::uint64_t { kTagOod = 51, kTagStats = 52, kTagGradcheck = 53 };

inline Experiment make_experiment(const RunConfig& cfg) {
  World w = make_world(cfg.world);
  Judge oracle = make_oracle_judge(w.truth, w.spec, cfg.judge.range);
  std::set<Prompt> ood;
  if (cfg.judge.kind == JudgeConfig::Kind::Biased) {
    std::vector<std::size_t> idx(w.prompts.prompts.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(cfg.seed, kTagOod));
    rng.shuffle(std::span(idx));
    const auto n = static_cast<std::size_t>(std::llround(cfg.judge.ood_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n; ++i) ood.insert(w.prompts.prompts[idx[i]]);
    Judge biased = make_biased_judge(oracle, ood, cfg.judge.offset);
    return {std::move(w), std::move(biased), std::move(ood)};
  }
  return {std::move(w), std::move(oracle), std::move(ood)};
}

inline std::filesystem::path output_root(const RunConfig& cfg) {
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return env;
  return cfg.out_dir;
}

inline std::filesystem::path run_directory(const RunConfig& cfg, Command c) {
  return output_root(cfg) / (cfg.run_name.empty() ? to_string(c) : cfg.run_name);
}

namespace detail {

inline void make_dirs(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

inline std::string path_str(const std::filesystem::path& p) { return p.string(); }

inline std::string prompts_text(const PromptSet& ps) {
  std::string out;
  for (const auto& x : ps.prompts) out += join_tokens(x.tokens) + "\n";
  return out;
}

}  // namespace detail

/// Means over the first and last 10% (at least one step) of a telemetry log.
struct TelemetryWindows {
  std::size_t steps = 0;
  double s_first = 0.0;
  double s_last = 0.0;
  double reward_w_last = 0.0;
  double reward_l_last = 0.0;
  double loss_last = 0.0;

  Json to_json() const {
    return Json{{"steps", steps},
                {"s_first10", s_first},
                {"s_last10", s_last},
                {"reward_w_last10", reward_w_last},
                {"reward_l_last10", reward_l_last},
                {"margin_last10", reward_w_last - reward_l_last},
                {"loss_last10", loss_last}};
  }
};

inline TelemetryWindows telemetry_windows(const TelemetryLog& log) {
  TelemetryWindows w;
  w.steps = log.size();
  if (log.empty()) return w;
  const std::size_t k = std::max<std::size_t>(1, (log.size() + 9) / 10);
  for (std::size_t i = 0; i < k; ++i) w.s_first += log[i].s;
  for (std::size_t i = log.size() - k; i < log.size(); ++i) {
    w.s_last += log[i].s;
    w.reward_w_last += log[i].reward_w;
    w.reward_l_last += log[i].reward_l;
    w.loss_last += log[i].loss;
  }
  const double n = static_cast<double>(k);
  w.s_first /= n;
  w.s_last /= n;
  w.reward_w_last /= n;
  w.reward_l_last /= n;
  w.loss_last /= n;
  return w;
}

/// True when the first record of every (iter, minibatch) shard has s within
/// `tol` of 0.5, i.e. right after each reference switch.
inline bool s_resets_at_switches(const TelemetryLog& log, double tol = 1e-12) {
  std::set<std::pair<int, int>> seen;
  bool ok = !log.empty();
  for (const auto& r : log)
    if (seen.insert({r.iter, r.minibatch}).second) ok = ok && std::abs(r.s - 0.5) <= tol;
  return ok;
}

/// Single-model baseline data: human chosen responses against one matrix
/// entry, no evaluation correction, N times the stage budget in one round.
inline PipelineConfig baseline_pipeline(const RunConfig& cfg) {
  PipelineConfig sp = cfg.pipeline;
  sp.pairs_per_stage = cfg.train.N * cfg.pipeline.pairs_per_stage;
  sp.n_per_prompt = cfg.train.N * cfg.pipeline.n_per_prompt;
  sp.rejected.mode = RejectedSelector::Mode::Explicit;
  sp.rejected.explicit_ids = {cfg.baseline_rejected};
  sp.human_weight = 1.0;
  sp.evaluation_correction = false;
  return sp;
}

namespace detail {

struct ArmResult {
  TabularPolicy policy;
  TelemetryLog log;
  double proxy = 0.0;
};

inline ArmResult train_arm(const Experiment& ex, const PreferenceDataset& pairs, const TrainConfig& tc) {
  ArmResult a;
  a.policy = mini_batch_iterative_dpo(ex.world.matrix.base(), ex.world.spec, pairs, tc, 1, a.log);
  a.proxy = alignment_proxy(a.policy, ex.world.truth, ex.world.spec, ex.world.prompts);
  return a;
}

inline void write_arm(const std::filesystem::path& dir, const std::string& name, const ArmResult& a) {
  const auto arm_dir = dir / "arms" / name;
  make_dirs(arm_dir);
  export_telemetry_csv(a.log, path_str(arm_dir / "telemetry.csv"));
  save_policy(a.policy, path_str(arm_dir / "policy.txt"));
}

inline double proxy_of(const Experiment& ex, const TabularPolicy& p) {
  return alignment_proxy(p, ex.world.truth, ex.world.spec, ex.world.prompts);
}

}  // namespace detail

inline void run_synth(const RunConfig& cfg, const Experiment& ex, const std::filesystem::path& dir, RunReport& rep) {
  using detail::path_str;
  const auto world_dir = dir / "world";
  detail::make_dirs(world_dir / "matrix");
  save_policy(ex.world.truth, path_str(world_dir / "truth.txt"));
  for (const auto& [id, p] : ex.world.matrix.entries) save_policy(p, path_str(world_dir / "matrix" / (model_id_string(id) + ".txt")));
  write_text_file(path_str(world_dir / "prompts.txt"), detail::prompts_text(ex.world.prompts));

  const auto& m = ex.world.matrix;
  const auto& pc = cfg.pipeline;
  const StageData data = build_stage_data(m, ex.world.prompts, ex.judge, pc, 1, cfg.seed);
  detail::make_dirs(dir / "data");
  write_text_file(path_str(dir / "data" / "chosen.txt"), serialize_instructions(data.expanded.chosen));
  write_text_file(path_str(dir / "data" / "rejected.txt"), serialize_instructions(data.expanded.rejected));
  write_text_file(path_str(dir / "data" / "preferences.txt"), serialize_preferences(data.pairs));

  // Re-derive the scored base samples and check that each landed in exactly
  // one pool under the "> tau chosen, <= tau rejected" rule.
  bool partition_ok = true;
  if (pc.evaluation_correction) {
    const auto tau = compute_tau(m.base(), m.spec, ex.world.prompts, ex.judge, pc.base_samples_per_prompt,
                                 derive_seed(cfg.seed, kTagStageTau, 1));
    const std::size_t matrix_records = ex.world.prompts.prompts.size() * static_cast<std::size_t>(pc.n_per_prompt);
    std::size_t wi = matrix_records, li = matrix_records;
    for (const auto& s : tau.samples) {
      const auto& pool = s.score > tau.tau ? data.expanded.chosen : data.expanded.rejected;
      std::size_t& i = s.score > tau.tau ? wi : li;
      partition_ok = partition_ok && i < pool.size() && pool[i].response == s.response && pool[i].prompt == s.prompt &&
                     pool[i].source == SourceTag::base();
      ++i;
    }
    partition_ok = partition_ok && wi == data.expanded.chosen.size() && li == data.expanded.rejected.size();
  }
  std::map<Prompt, std::set<Response>> chosen_by_prompt, rejected_by_prompt;
  for (const auto& r : data.expanded.chosen) chosen_by_prompt[r.prompt].insert(r.response);
  for (const auto& r : data.expanded.rejected) rejected_by_prompt[r.prompt].insert(r.response);
  bool pairs_ok = !data.pairs.empty();
  for (const auto& p : data.pairs)
    pairs_ok = pairs_ok && p.chosen != p.rejected && chosen_by_prompt[p.prompt].contains(p.chosen) &&
               rejected_by_prompt[p.prompt].contains(p.rejected);
  PreferenceDataset probe(30000, data.pairs.front());
  const auto shards = partition_minibatches(probe, 3, cfg.seed);
  const bool split_ok = shards.size() == 3 && shards[0].size() == 10000 && shards[1].size() == 10000 && shards[2].size() == 10000;

  rep.metrics["tau"] = data.tau;
  rep.metrics["scored_samples"] = data.scored;
  rep.metrics["chosen_records"] = data.expanded.chosen.size();
  rep.metrics["rejected_records"] = data.expanded.rejected.size();
  rep.metrics["pairs"] = data.pairs.size();
  rep.metrics["base_proxy"] = detail::proxy_of(ex, m.base());
  Json entries = Json::object();
  for (const auto& [id, p] : m.entries) entries[model_id_string(id)] = detail::proxy_of(ex, p);
  rep.metrics["entry_proxies"] = entries;
  rep.flags["tau_partition"] = partition_ok && pairs_ok && split_ok;
}

inline void run_train(const RunConfig& cfg, const Experiment& ex, const std::filesystem::path& dir, RunReport& rep,
                      TelemetryLog& log) {
  std::vector<StageSummary> summaries;
  const auto stages = tso_outer_loop(ex.world.matrix, ex.world.prompts, ex.judge, cfg.train, cfg.pipeline, log, &summaries);
  detail::make_dirs(dir / "policies");
  Json proxies = Json::array();
  Json stage_info = Json::array();
  for (std::size_t n = 0; n < stages.size(); ++n) {
    save_policy(stages[n], detail::path_str(dir / "policies" / ("stage_" + std::to_string(n + 1) + ".txt")));
    proxies.push_back(detail::proxy_of(ex, stages[n]));
    stage_info.push_back(Json{{"stage", summaries[n].stage}, {"tau", summaries[n].tau}, {"pairs", summaries[n].pairs}});
  }
  bool increasing = true;
  for (std::size_t n = 1; n < proxies.size(); ++n) increasing = increasing && proxies[n].get<double>() > proxies[n - 1].get<double>();
  rep.metrics["base_proxy"] = detail::proxy_of(ex, ex.world.matrix.base());
  rep.metrics["stage_proxies"] = proxies;
  rep.metrics["stages"] = stage_info;
  rep.metrics["telemetry"] = telemetry_windows(log).to_json();
  rep.flags["s_reset"] = s_resets_at_switches(log);

  bool beats_baseline = true;
  if (cfg.baseline) {
    const StageData bd = build_stage_data(ex.world.matrix, ex.world.prompts, ex.judge, baseline_pipeline(cfg), 1, cfg.seed);
    TrainConfig tc = cfg.train;
    tc.loss = LossKind::Dpo;
    tc.T = 1;
    const auto arm = detail::train_arm(ex, bd.pairs, tc);
    detail::write_arm(dir, "baseline", arm);
    rep.metrics["baseline_proxy"] = arm.proxy;
    rep.metrics["baseline_pairs"] = bd.pairs.size();
    beats_baseline = proxies.back().get<double>() > arm.proxy;
  }
  rep.flags["stage_trend"] = increasing && beats_baseline;
}

/// One arm per matrix entry used as the only rejected source, plus SELF_ONLY.
/// Each arm is one round of iterative training from the base on stage-1 data.
inline void run_ablate_negsrc(const RunConfig& cfg, const Experiment& ex, const std::filesystem::path& dir,
                              RunReport& rep) {
  const auto& m = ex.world.matrix;
  const double base_proxy = detail::proxy_of(ex, m.base());
  const double base_lambda = cfg.world.grid.at(m.base_id);
  std::vector<std::pair<std::string, RejectedSelector>> arms;
  arms.push_back({"self_only", {RejectedSelector::Mode::SelfOnly, {}}});
  for (const auto& [id, _] : m.entries) arms.push_back({model_id_string(id), {RejectedSelector::Mode::Explicit, {id}}});

  // Closest quality strictly below the base.
  std::string below_name;
  double below_lambda = -1.0;
  for (const auto& [id, lam] : cfg.world.grid)
    if (lam < base_lambda && lam > below_lambda) {
      below_lambda = lam;
      below_name = model_id_string(id);
    }

  Json proxies = Json::object();
  for (const auto& [name, sel] : arms) {
    PipelineConfig pc = cfg.pipeline;
    pc.rejected = sel;
    const StageData data = build_stage_data(m, ex.world.prompts, ex.judge, pc, 1, cfg.seed);
    const auto arm = detail::train_arm(ex, data.pairs, cfg.train);
    detail::write_arm(dir, name, arm);
    proxies[name] = arm.proxy;
  }
  rep.metrics["base_proxy"] = base_proxy;
  rep.metrics["arm_proxies"] = proxies;
  rep.metrics["below_base_source"] = below_name;
  const bool self_below = proxies["self_only"].get<double>() < base_proxy;
  const bool near_above = !below_name.empty() && proxies[below_name].get<double>() > base_proxy;
  rep.metrics["self_only_below_base"] = self_below;
  rep.metrics["below_base_source_above_base"] = near_above;
  rep.flags["reverse_alignment"] = self_below && near_above;
}

/// DPO with T = 1 against T = 3 on the same single-model pairs (the
/// baseline data).
inline void run_ablate_minibatch(const RunConfig& cfg, const Experiment& ex, const std::filesystem::path& dir,
                                 RunReport& rep) {
  const StageData data = build_stage_data(ex.world.matrix, ex.world.prompts, ex.judge, baseline_pipeline(cfg), 1, cfg.seed);
  Json proxies = Json::object();
  Json windows = Json::object();
  for (int T : {1, 3}) {
    TrainConfig tc = cfg.train;
    tc.loss = LossKind::Dpo;
    tc.T = T;
    const auto arm = detail::train_arm(ex, data.pairs, tc);
    const std::string name = "T" + std::to_string(T);
    detail::write_arm(dir, name, arm);
    proxies[name] = arm.proxy;
    windows[name] = telemetry_windows(arm.log).to_json();
    if (T == 3) rep.flags["s_reset"] = s_resets_at_switches(arm.log);
  }
  rep.metrics["base_proxy"] = detail::proxy_of(ex, ex.world.matrix.base());
  rep.metrics["pairs"] = data.pairs.size();
  rep.metrics["arm_proxies"] = proxies;
  rep.metrics["telemetry"] = windows;
  rep.flags["minibatch_t3_ge_t1"] = proxies["T3"].get<double>() >= proxies["T1"].get<double>();
}

/// All four losses on the same stage-1 pairs with the configured T.
inline void run_ablate_loss(const RunConfig& cfg, const Experiment& ex, const std::filesystem::path& dir,
                            RunReport& rep) {
  const StageData data = build_stage_data(ex.world.matrix, ex.world.prompts, ex.judge, cfg.pipeline, 1, cfg.seed);
  Json proxies = Json::object();
  Json windows = Json::object();
  std::map<LossKind, TelemetryWindows> w;
  for (LossKind k : kAllLossKinds) {
    TrainConfig tc = cfg.train;
    tc.loss = k;
    const auto arm = detail::train_arm(ex, data.pairs, tc);
    detail::write_arm(dir, to_string(k), arm);
    proxies[to_string(k)] = arm.proxy;
    w[k] = telemetry_windows(arm.log);
    windows[to_string(k)] = w[k].to_json();
  }
  rep.metrics["base_proxy"] = detail::proxy_of(ex, ex.world.matrix.base());
  rep.metrics["pairs"] = data.pairs.size();
  rep.metrics["arm_proxies"] = proxies;
  rep.metrics["telemetry"] = windows;
  const auto& dpo = w[LossKind::Dpo];
  const auto& clip = w[LossKind::DualClip];
  rep.flags["s_decay"] = dpo.s_last < 0.2 && dpo.s_last < dpo.s_first;
  rep.flags["reward_curve"] =
      dpo.reward_w_last < 0.0 && dpo.reward_w_last - dpo.reward_l_last > 0.0 && clip.reward_w_last > dpo.reward_w_last;
}

inline TabularPolicy resolve_stats_policy(const RunConfig& cfg, const Experiment& ex) {
  const auto& m = ex.world.matrix;
  if (cfg.stats_policy == "base") return m.base();
  if (cfg.stats_policy == "human") return m.human;
  if (cfg.stats_policy.size() >= 4 && cfg.stats_policy[0] == 'v' && std::filesystem::path(cfg.stats_policy).extension().empty()) {
    const ModelId id = parse_model_id(cfg.stats_policy, "stats_policy");
    if (!m.entries.contains(id)) throw ConfigError("key 'stats_policy': " + cfg.stats_policy + " is not on the lambda grid");
    return m.entries.at(id);
  }
  TabularPolicy p = load_policy(cfg.stats_policy);
  if (!(p.vocab() == m.base().vocab()) || p.order() != m.base().order())
    throw ConfigError("key 'stats_policy': policy shape does not match the world");
  return p;
}

/// Score-distribution moments of judge scores on policy samples, per prompt
/// and pooled. Prompts whose samples all score the same are skipped.
inline void run_stats(const RunConfig& cfg, const Experiment& ex, const std::filesystem::path& dir, RunReport& rep) {
  const TabularPolicy policy = resolve_stats_policy(cfg, ex);
  std::vector<PromptScoreStats> rows;
  std::vector<double> pooled;
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < ex.world.prompts.prompts.size(); ++i) {
    const Prompt& x = ex.world.prompts.prompts[i];
    std::vector<double> scores;
    for (int j = 0; j < cfg.stats_samples; ++j) {
      Rng rng(derive_seed(cfg.seed, kTagStats, i, static_cast<std::uint64_t>(j)));
      scores.push_back(ex.judge.score(x, sample_response(policy, ex.world.spec, x, rng)));
    }
    pooled.insert(pooled.end(), scores.begin(), scores.end());
    try {
      rows.push_back({i, score_stats(scores)});
    } catch (const InputError&) {
      ++degenerate;
    }
  }
  write_text_file(detail::path_str(dir / "prompt_stats.csv"), prompt_stats_csv(rows));
  const ScoreStats all = score_stats(pooled);
  rep.metrics["policy"] = cfg.stats_policy;
  rep.metrics["pooled"] = Json{{"n", all.n}, {"mean", all.mean}, {"var", all.variance}, {"skew", all.skewness}, {"kurt", all.excess_kurtosis}};
  rep.metrics["degenerate_prompts"] = degenerate;

  const double v[] = {1, 2, 3, 4, 5};
  const ScoreStats s5 = score_stats(v);
  bool affine_ok = true;
  Rng rng(derive_seed(cfg.seed, kTagStats, 0xaffULL));
  std::vector<double> sample(100), scaled(100);
  for (int i = 0; i < 100; ++i) {
    sample[static_cast<std::size_t>(i)] = std::exp(standard_normal(rng));
    scaled[static_cast<std::size_t>(i)] = 3.5 * sample[static_cast<std::size_t>(i)] - 7.0;
  }
  const ScoreStats a = score_stats(sample), b = score_stats(scaled);
  affine_ok = std::abs(a.skewness - b.skewness) <= 1e-9 * std::max(1.0, std::abs(a.skewness)) &&
              std::abs(a.excess_kurtosis - b.excess_kurtosis) <= 1e-9 * std::max(1.0, std::abs(a.excess_kurtosis));
  rep.flags["moments"] = s5.skewness == 0.0 && s5.excess_kurtosis == -1.3 && affine_ok;
}

inline void run_gradcheck(const RunConfig& cfg, RunReport& rep) {
  Json maxima = Json::object();
  bool all_ok = true;
  for (LossKind k : kAllLossKinds) {
    const auto r = gradcheck_loss(k, cfg.train.loss_cfg, cfg.gradcheck_instances, cfg.gradcheck_vocab,
                                  cfg.gradcheck_max_len, cfg.gradcheck_h, derive_seed(cfg.seed, kTagGradcheck));
    maxima[to_string(k)] = Json{{"max_rel_error", r.max_rel_error}, {"instances", r.instances}, {"coordinates", r.coordinates}};
    all_ok = all_ok && r.max_rel_error <= cfg.gradcheck_tol && r.instances >= 100;
  }
  const auto lp = gradcheck_log_prob(cfg.gradcheck_instances, cfg.gradcheck_vocab, cfg.gradcheck_max_len, 1,
                                     cfg.gradcheck_h, derive_seed(cfg.seed, kTagGradcheck, 1));
  const double norm = normalization_error(10, 4, 3, derive_seed(cfg.seed, kTagGradcheck, 2));
  const auto dec = dual_clip_decoupling(cfg.train.loss_cfg);
  rep.metrics["loss_gradients"] = maxima;
  rep.metrics["log_prob_max_rel_error"] = lp.max_rel_error;
  rep.metrics["normalization_max_error"] = norm;
  rep.metrics["decoupling"] = Json{{"rejected_partials_zero", dec.rejected_partials_zero},
                                   {"gradient_is_chosen_only", dec.gradient_is_chosen_only},
                                   {"chosen_reward_before", dec.chosen_reward_before},
                                   {"chosen_reward_after", dec.chosen_reward_after}};
  rep.flags["gradient_fidelity"] = all_ok;
  rep.flags["normalization"] = norm <= 1e-9;
  rep.flags["closed_form_losses"] = closed_form_losses_hold(derive_seed(cfg.seed, kTagGradcheck, 3));
  rep.flags["dual_clip_decoupling"] = dec.holds();
}

/// Runs `command`, writing its artifacts to the run directory, and returns the
/// report (also written as report.json).
inline RunReport run_command(const RunConfig& cfg, Command command) {
  RunReport rep;
  rep.command = command;
  rep.run_dir = run_directory(cfg, command);
  detail::make_dirs(rep.run_dir);
  const auto& dir = rep.run_dir;
  write_text_file(detail::path_str(dir / "config.json"), cfg.snapshot.dump(2) + "\n");
  write_text_file(detail::path_str(dir / "seed"), std::to_string(cfg.seed) + "\n");

  TelemetryLog log;
  if (command == Command::Gradcheck) {
    run_gradcheck(cfg, rep);
  } else {
    const Experiment ex = make_experiment(cfg);
    switch (command) {
      case Command::Synth: run_synth(cfg, ex, dir, rep); break;
      case Command::Train: run_train(cfg, ex, dir, rep, log); break;
      case Command::AblateNegsrc: run_ablate_negsrc(cfg, ex, dir, rep); break;
      case Command::AblateMinibatch: run_ablate_minibatch(cfg, ex, dir, rep); break;
      case Command::AblateLoss: run_ablate_loss(cfg, ex, dir, rep); break;
      case Command::Stats: run_stats(cfg, ex, dir, rep); break;
      case Command::Gradcheck: break;
    }
  }
  export_telemetry_csv(log, detail::path_str(dir / "telemetry.csv"));
  rep.metrics["seed"] = cfg.seed;
  write_text_file(detail::path_str(dir / "report.json"), rep.to_json().dump(2) + "\n");
  return rep;
}

}  // namespace tso

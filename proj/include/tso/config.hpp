#pragma once

/*
 * Run configuration: a flat JSON object of key/value settings, overlaid by
 * command-line `--key value` overrides and validated before any work starts.
 */

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tso/error.hpp"
#include "tso/judge.hpp"
#include "tso/losses.hpp"
#include "tso/matrix.hpp"
#include "tso/policy_io.hpp"
#include "tso/trainer.hpp"
#include "tso/world.hpp"

namespace tso {

using Json = nlohmann::json;

struct JudgeConfig {
  enum class Kind { Oracle, Biased };
  Kind kind = Kind::Oracle;
  ScoreRange range{};
  double ood_fraction = 0.25;
  double offset = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 43;
  std::string out_dir = "runs";
  std::string run_name;
  WorldConfig world;
  JudgeConfig judge;
  PipelineConfig pipeline;
  TrainConfig train;
  bool baseline = true;
  ModelId baseline_rejected{3, 2};
  int stats_samples = 32;
  std::string stats_policy = "base";
  int gradcheck_instances = 100;
  int gradcheck_vocab = 6;
  int gradcheck_max_len = 3;
  double gradcheck_h = 1e-5;
  double gradcheck_tol = 1e-5;

  Json snapshot;  // effective key/value document, defaults filled in
};

inline ModelId parse_model_id(std::string_view s, const std::string& key) {
  SourceTag t;
  try {
    t = parse_source_tag(s);
  } catch (const ParseError&) {
    throw ConfigError("key '" + key + "': '" + std::string(s) + "' is not a model coordinate like v2s2");
  }
  if (t.kind != SourceTag::Kind::Model) throw ConfigError("key '" + key + "': expected a model coordinate, got " + std::string(s));
  return t.id;
}

inline std::string model_id_string(ModelId id) { return to_string(SourceTag::model(id)); }

/// Every accepted key with its default value.
inline Json default_config_document() {
  Json grid = Json::object();
  for (const auto& [k, v] : std::vector<std::pair<std::string, double>>{
           {"v1s1", 0.1}, {"v2s1", 0.25}, {"v3s1", 0.4}, {"v1s2", 0.3}, {"v2s2", 0.5}, {"v3s2", 0.9}})
    grid[k] = v;
  const LossConfig lc{};
  const TrainConfig tc{};
  const PipelineConfig pc{};
  return Json{
      {"seed", 43},
      {"out_dir", "runs"},
      {"run_name", ""},
      {"vocab", 8},
      {"max_len", 4},
      {"order", 1},
      {"prompts", 32},
      {"prompt_len", 2},
      {"truth_scale", 2.0},
      {"lambda_grid", grid},
      {"base", "v2s2"},
      {"judge", "oracle"},
      {"score_lo", 2.0},
      {"score_hi", 10.0},
      {"ood_fraction", 0.25},
      {"judge_offset", 0.0},
      {"human_weight", pc.human_weight},
      {"rejected", "weaker_or"},
      {"rejected_ids", Json::array()},
      {"n_per_prompt", pc.n_per_prompt},
      {"base_samples_per_prompt", pc.base_samples_per_prompt},
      {"pairs_per_stage", pc.pairs_per_stage},
      {"evaluation_correction", pc.evaluation_correction},
      {"regenerate_matrix_records", pc.regenerate_matrix_records},
      {"loss", "dual_clip"},
      {"beta", lc.beta},
      {"gamma_w", lc.gamma_w},
      {"gamma_l", lc.gamma_l},
      {"epsilon", lc.epsilon},
      {"tau_ipo", lc.tau_ipo},
      {"lr", 0.005},
      {"adam_beta1", tc.adam_beta1},
      {"adam_beta2", tc.adam_beta2},
      {"adam_eps", tc.adam_eps},
      {"weight_decay", tc.weight_decay},
      {"grad_clip", tc.grad_clip},
      {"warmup_frac", tc.warmup_frac},
      {"batch_size", 64},
      {"epochs", tc.epochs_per_minibatch},
      {"T", tc.T},
      {"N", tc.N},
      {"baseline", true},
      {"baseline_rejected", "v3s2"},
      {"stats_samples", 32},
      {"stats_policy", "base"},
      {"gradcheck_instances", 100},
      {"gradcheck_vocab", 6},
      {"gradcheck_max_len", 3},
      {"gradcheck_h", 1e-5},
      {"gradcheck_tol", 1e-5},
  };
}

/// Keys a config file must set explicitly.
inline const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{"seed"};
  return keys;
}

namespace detail {

inline const Json& at_key(const Json& doc, const std::string& key) { return doc.at(key); }

inline long long get_int(const Json& doc, const std::string& key) {
  const Json& v = at_key(doc, key);
  if (!v.is_number_integer()) throw ConfigError("key '" + key + "' must be an integer, got " + v.dump());
  return v.get<long long>();
}

inline int get_int32(const Json& doc, const std::string& key) {
  const long long v = get_int(doc, key);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError("key '" + key + "' is out of range");
  return static_cast<int>(v);
}

inline double get_double(const Json& doc, const std::string& key) {
  const Json& v = at_key(doc, key);
  if (!v.is_number()) throw ConfigError("key '" + key + "' must be a number, got " + v.dump());
  return v.get<double>();
}

inline bool get_bool(const Json& doc, const std::string& key) {
  const Json& v = at_key(doc, key);
  if (!v.is_boolean()) throw ConfigError("key '" + key + "' must be true or false, got " + v.dump());
  return v.get<bool>();
}

inline std::string get_string(const Json& doc, const std::string& key) {
  const Json& v = at_key(doc, key);
  if (!v.is_string()) throw ConfigError("key '" + key + "' must be a string, got " + v.dump());
  return v.get<std::string>();
}

// The value text of a command-line override. String-valued keys take the text
// verbatim; anything else is read as JSON when it parses.
inline Json override_value(const std::string& key, const std::string& text) {
  const Json defaults = default_config_document();
  if (auto it = defaults.find(key); it != defaults.end() && it->is_string()) return Json(text);
  Json v = Json::parse(text, nullptr, false);
  if (v.is_discarded()) return Json(text);
  return v;
}

}  // namespace detail

/// Builds and validates a RunConfig from a key/value document. Unknown keys,
/// missing required keys and type mismatches are configuration errors naming
/// the offending key.
inline RunConfig config_from_json(const Json& doc_in) {
  if (!doc_in.is_object()) throw ConfigError("configuration must be a JSON object");
  const Json defaults = default_config_document();
  for (const auto& [key, _] : doc_in.items())
    if (!defaults.contains(key)) throw ConfigError("unknown key '" + key + "'");
  for (const auto& key : required_config_keys())
    if (!doc_in.contains(key)) throw ConfigError("missing required key '" + key + "'");

  Json doc = defaults;
  for (const auto& [key, value] : doc_in.items()) doc[key] = value;

  using namespace detail;
  RunConfig c;
  const long long seed = get_int(doc, "seed");
  if (seed < 0) throw ConfigError("key 'seed' must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.out_dir = get_string(doc, "out_dir");
  c.run_name = get_string(doc, "run_name");

  c.world.vocab = get_int32(doc, "vocab");
  c.world.max_len = get_int32(doc, "max_len");
  c.world.order = get_int32(doc, "order");
  c.world.prompts = get_int32(doc, "prompts");
  c.world.prompt_len = get_int32(doc, "prompt_len");
  c.world.truth_scale = get_double(doc, "truth_scale");
  c.world.seed = c.seed;
  const Json& grid = doc.at("lambda_grid");
  if (!grid.is_object()) throw ConfigError("key 'lambda_grid' must be an object of coordinate -> lambda");
  for (const auto& [coord, lam] : grid.items()) {
    if (!lam.is_number()) throw ConfigError("key 'lambda_grid." + coord + "' must be a number");
    const double v = lam.get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("key 'lambda_grid." + coord + "' must lie in [0, 1]");
    c.world.grid[parse_model_id(coord, "lambda_grid")] = v;
  }
  c.world.base_id = parse_model_id(get_string(doc, "base"), "base");
  try {
    c.world.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  const std::string judge = get_string(doc, "judge");
  if (judge == "oracle") c.judge.kind = JudgeConfig::Kind::Oracle;
  else if (judge == "biased") c.judge.kind = JudgeConfig::Kind::Biased;
  else throw ConfigError("key 'judge' must be oracle or biased, got '" + judge + "'");
  c.judge.range = {get_double(doc, "score_lo"), get_double(doc, "score_hi")};
  if (!(c.judge.range.lo < c.judge.range.hi)) throw ConfigError("key 'score_hi' must exceed 'score_lo'");
  c.judge.ood_fraction = get_double(doc, "ood_fraction");
  if (!(c.judge.ood_fraction >= 0.0 && c.judge.ood_fraction <= 1.0))
    throw ConfigError("key 'ood_fraction' must lie in [0, 1]");
  c.judge.offset = get_double(doc, "judge_offset");

  auto& pc = c.pipeline;
  pc.human_weight = get_double(doc, "human_weight");
  pc.rejected.mode = parse_rejected_mode(get_string(doc, "rejected"));
  const Json& ids = doc.at("rejected_ids");
  if (!ids.is_array()) throw ConfigError("key 'rejected_ids' must be an array of model coordinates");
  for (const auto& id : ids) {
    if (!id.is_string()) throw ConfigError("key 'rejected_ids' must contain strings like v1s1");
    pc.rejected.explicit_ids.push_back(parse_model_id(id.get<std::string>(), "rejected_ids"));
  }
  if (pc.rejected.mode == RejectedSelector::Mode::Explicit && pc.rejected.explicit_ids.empty())
    throw ConfigError("key 'rejected_ids' must be non-empty when rejected = explicit");
  pc.n_per_prompt = get_int32(doc, "n_per_prompt");
  pc.base_samples_per_prompt = get_int32(doc, "base_samples_per_prompt");
  pc.pairs_per_stage = get_int32(doc, "pairs_per_stage");
  pc.evaluation_correction = get_bool(doc, "evaluation_correction");
  pc.regenerate_matrix_records = get_bool(doc, "regenerate_matrix_records");
  for (const auto& id : pc.rejected.explicit_ids)
    if (!c.world.grid.contains(id)) throw ConfigError("key 'rejected_ids': " + model_id_string(id) + " is not on the lambda grid");
  pc.validate();

  auto& tc = c.train;
  tc.loss = parse_loss_kind(get_string(doc, "loss"));
  tc.loss_cfg.beta = get_double(doc, "beta");
  tc.loss_cfg.gamma_w = get_double(doc, "gamma_w");
  tc.loss_cfg.gamma_l = get_double(doc, "gamma_l");
  tc.loss_cfg.epsilon = get_double(doc, "epsilon");
  tc.loss_cfg.tau_ipo = get_double(doc, "tau_ipo");
  tc.lr = get_double(doc, "lr");
  tc.adam_beta1 = get_double(doc, "adam_beta1");
  tc.adam_beta2 = get_double(doc, "adam_beta2");
  tc.adam_eps = get_double(doc, "adam_eps");
  tc.weight_decay = get_double(doc, "weight_decay");
  tc.grad_clip = get_double(doc, "grad_clip");
  tc.warmup_frac = get_double(doc, "warmup_frac");
  tc.batch_size = get_int32(doc, "batch_size");
  tc.epochs_per_minibatch = get_int32(doc, "epochs");
  tc.T = get_int32(doc, "T");
  tc.N = get_int32(doc, "N");
  tc.seed = c.seed;
  try {
    tc.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  c.baseline = get_bool(doc, "baseline");
  c.baseline_rejected = parse_model_id(get_string(doc, "baseline_rejected"), "baseline_rejected");
  if (!c.world.grid.contains(c.baseline_rejected)) throw ConfigError("key 'baseline_rejected' is not on the lambda grid");
  c.stats_samples = get_int32(doc, "stats_samples");
  if (c.stats_samples < 4) throw ConfigError("key 'stats_samples' must be >= 4");
  c.stats_policy = get_string(doc, "stats_policy");
  c.gradcheck_instances = get_int32(doc, "gradcheck_instances");
  c.gradcheck_vocab = get_int32(doc, "gradcheck_vocab");
  c.gradcheck_max_len = get_int32(doc, "gradcheck_max_len");
  c.gradcheck_h = get_double(doc, "gradcheck_h");
  c.gradcheck_tol = get_double(doc, "gradcheck_tol");
  if (c.gradcheck_instances < 1) throw ConfigError("key 'gradcheck_instances' must be >= 1");
  if (c.gradcheck_vocab < 2) throw ConfigError("key 'gradcheck_vocab' must be >= 2");
  if (c.gradcheck_max_len < 1) throw ConfigError("key 'gradcheck_max_len' must be >= 1");
  if (!(c.gradcheck_h > 0)) throw ConfigError("key 'gradcheck_h' must be > 0");

  c.snapshot = std::move(doc);
  return c;
}

/// Reads the JSON file at `path`, applies `overrides` (key -> value text), and
/// validates the result.
inline RunConfig load_config(const std::string& path, const std::map<std::string, std::string>& overrides = {}) {
  const std::string text = read_text_file(path);
  Json doc = Json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("'" + path + "' is not valid JSON");
  if (!doc.is_object()) throw ConfigError("'" + path + "' must hold a JSON object");
  for (const auto& [key, value] : overrides) doc[key] = detail::override_value(key, value);
  return config_from_json(doc);
}

}  // namespace tso

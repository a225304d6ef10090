#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "tso/judge.hpp"
#include "tso/trainer.hpp"
#include "tso/world.hpp"

using namespace tso;

namespace {

PreferenceDataset numbered_pairs(std::size_t n) {
  PreferenceDataset d;
  for (std::size_t i = 0; i < n; ++i)
    d.push_back({Prompt{{static_cast<Token>(i % 7), static_cast<Token>(i / 7 % 7), static_cast<Token>(i / 49)}},
                 Response{{1, 0}}, Response{{2, 0}}, SourceTag::human(), SourceTag::base()});
  return d;
}

WorldConfig small_world() {
  WorldConfig wc;
  wc.vocab = 4;
  wc.max_len = 3;
  wc.prompts = 8;
  wc.prompt_len = 2;
  wc.grid = {{{1, 1}, 0.1}, {{2, 1}, 0.25}, {{3, 1}, 0.4}, {{1, 2}, 0.3}, {{2, 2}, 0.5}, {{3, 2}, 0.9}};
  wc.base_id = {2, 2};
  wc.seed = 7;
  return wc;
}

TrainConfig small_train() {
  TrainConfig tc;
  tc.lr = 0.02;
  tc.batch_size = 16;
  tc.epochs_per_minibatch = 1;
  tc.T = 3;
  tc.N = 3;
  tc.seed = 7;
  return tc;
}

PipelineConfig small_pipeline() {
  PipelineConfig pc;
  pc.n_per_prompt = 6;
  pc.base_samples_per_prompt = 6;
  pc.pairs_per_stage = 120;
  return pc;
}

}  // namespace

TEST(Trainer, PartitionSizes) {
  const auto big = partition_minibatches(numbered_pairs(30000), 3, 1);
  ASSERT_EQ(big.size(), 3u);
  for (const auto& s : big) EXPECT_EQ(s.size(), 10000u);
  const auto small = partition_minibatches(numbered_pairs(10), 3, 1);
  EXPECT_EQ(small[0].size(), 4u);
  EXPECT_EQ(small[1].size(), 3u);
  EXPECT_EQ(small[2].size(), 3u);
}

TEST(Trainer, PartitionIsADisjointCover) {
  const auto d = numbered_pairs(100);
  const auto shards = partition_minibatches(d, 7, 3);
  std::multiset<Prompt> got, want;
  for (const auto& s : shards)
    for (const auto& p : s) got.insert(p.prompt);
  for (const auto& p : d) want.insert(p.prompt);
  EXPECT_EQ(got, want);
  const auto one = partition_minibatches(d, 1, 3);
  ASSERT_EQ(one.size(), 1u);
  std::multiset<Prompt> single;
  for (const auto& p : one[0]) single.insert(p.prompt);
  EXPECT_EQ(single, want);
  EXPECT_EQ(partition_minibatches(d, 7, 3), shards);
}

TEST(Trainer, PartitionErrors) {
  EXPECT_THROW(partition_minibatches(numbered_pairs(2), 3, 1), InputError);
  EXPECT_THROW(partition_minibatches(numbered_pairs(2), 0, 1), InputError);
}

TEST(Trainer, AdamZeroGradientWithoutDecayIsANoOp) {
  const TabularPolicy p = random_policy(Vocabulary{4, 0}, 1, 1.0, 3);
  TrainConfig tc;
  tc.lr = 0.1;
  tc.weight_decay = 0.0;
  TrainState s(p, 10);
  s = adam_step(std::move(s), PolicyGradient(p), tc);
  EXPECT_EQ(s.policy, p);
  EXPECT_EQ(s.step, 1);
}

TEST(Trainer, AdamFirstStepIsSignedLearningRate) {
  const TabularPolicy p = random_policy(Vocabulary{4, 0}, 1, 1.0, 3);
  TrainConfig tc;
  tc.lr = 0.1;
  tc.weight_decay = 0.0;
  tc.warmup_frac = 0.0;
  PolicyGradient g(p);
  Rng rng(4);
  for (double& v : g.values) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.01 + 0.04 * rng.uniform());
  TrainState s(p, 10);
  const double lr0 = scheduled_lr(tc, 0, 10);
  EXPECT_EQ(lr0, 0.1);
  s = adam_step(std::move(s), g, tc);
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const double want = p.logits()[i] - lr0 * (g.values[i] > 0 ? 1.0 : -1.0);
    EXPECT_NEAR(s.policy.logits()[i], want, 1e-5 * lr0);
    EXPECT_DOUBLE_EQ(s.m[i], 0.1 * g.values[i]);
  }
}

TEST(Trainer, AdamClipsTheGlobalNorm) {
  const TabularPolicy p(Vocabulary{2, 0}, 0);
  TrainConfig tc;
  PolicyGradient g(p);
  g.values = {3.0, 4.0};
  TrainState s(p, 10);
  s = adam_step(std::move(s), g, tc);
  EXPECT_NEAR(s.m[0], 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(s.m[1], 0.1 * 0.8, 1e-15);
}

TEST(Trainer, AdamRejectsNonFiniteGradients) {
  const TabularPolicy p(Vocabulary{2, 0}, 0);
  PolicyGradient g(p);
  g.values[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(TrainState(p, 10), g, TrainConfig{}), NumericalError);
}

TEST(Trainer, ScheduleWarmsUpAndEndsAtZero) {
  TrainConfig tc;
  tc.lr = 1.0;
  tc.warmup_frac = 0.03;
  const long total = 200;  // ceil(6) warmup steps
  EXPECT_NEAR(scheduled_lr(tc, 0, total), 1.0 / 6.0, 1e-15);
  EXPECT_EQ(scheduled_lr(tc, 5, total), 1.0);
  EXPECT_EQ(scheduled_lr(tc, 6, total), 1.0);
  EXPECT_EQ(scheduled_lr(tc, total - 1, total), 0.0);
  double prev = 2.0;
  for (long s = 6; s < total; ++s) {
    const double lr = scheduled_lr(tc, s, total);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Trainer, FinalStepUsesZeroLearningRate) {
  const TabularPolicy p = random_policy(Vocabulary{4, 0}, 1, 1.0, 3);
  TrainConfig tc;
  tc.weight_decay = 0.5;
  PolicyGradient g(p);
  for (double& v : g.values) v = 0.3;
  TrainState s(p, 4);
  s.step = 3;
  s = adam_step(std::move(s), g, tc);
  EXPECT_EQ(s.policy, p);
}

class ShardTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto wc = small_world();
    world = make_world(wc);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
      const Prompt& x = world.prompts.prompts[static_cast<std::size_t>(i) % world.prompts.prompts.size()];
      PreferencePair p{x, sample_response(world.truth, world.spec, x, rng),
                       sample_response(world.matrix.entries.at({1, 1}), world.spec, x, rng), SourceTag::human(),
                       SourceTag::model({1, 1})};
      if (p.chosen != p.rejected) data.push_back(p);
    }
    while (data.size() < 100) data.push_back(data.front());
    data.resize(100);
  }
  World world;
  PreferenceDataset data;
};

TEST_F(ShardTest, RecordCountAndFirstStep) {
  TrainConfig tc = small_train();
  tc.batch_size = 25;
  tc.epochs_per_minibatch = 2;
  TrainState state(world.matrix.base(), steps_per_shard(100, tc));
  const TabularPolicy ref = state.policy;
  TelemetryLog log;
  train_on_minibatch(state, ref, world.spec, data, tc, {1, 1}, log);
  ASSERT_EQ(log.size(), 8u);
  EXPECT_EQ(log[0].s, 0.5);
  EXPECT_EQ(log[0].reward_w, 0.0);
  EXPECT_EQ(log[0].reward_l, 0.0);
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(log[i].step, static_cast<long>(i));
  EXPECT_EQ(log.back().lr, 0.0);
}

TEST_F(ShardTest, TrainingIsBitwiseDeterministic) {
  const TrainConfig tc = small_train();
  TelemetryLog a, b;
  const auto pa = mini_batch_iterative_dpo(world.matrix.base(), world.spec, data, tc, 1, a);
  const auto pb = mini_batch_iterative_dpo(world.matrix.base(), world.spec, data, tc, 1, b);
  EXPECT_EQ(pa, pb);
  EXPECT_EQ(a, b);
}

TEST_F(ShardTest, ReferenceResetsAtEveryShard) {
  const TrainConfig tc = small_train();
  TelemetryLog log;
  mini_batch_iterative_dpo(world.matrix.base(), world.spec, data, tc, 1, log);
  std::set<int> seen;
  int prev = 0;
  for (const auto& r : log) {
    if (r.minibatch != prev) {
      EXPECT_EQ(r.s, 0.5) << "shard " << r.minibatch;
      EXPECT_EQ(r.reward_w, 0.0);
      seen.insert(r.minibatch);
      prev = r.minibatch;
    }
  }
  EXPECT_EQ(seen, (std::set<int>{1, 2, 3}));
  EXPECT_NE(log[1].s, 0.5);
}

TEST_F(ShardTest, SwitchCountChangesTheResult) {
  TrainConfig t1 = small_train();
  t1.T = 1;
  const TrainConfig t3 = small_train();
  TelemetryLog a, b;
  const auto p1 = mini_batch_iterative_dpo(world.matrix.base(), world.spec, data, t1, 1, a);
  const auto p3 = mini_batch_iterative_dpo(world.matrix.base(), world.spec, data, t3, 1, b);
  EXPECT_NE(p1, p3);
  EXPECT_EQ(a.size(), 7u);  // one shard of 100 in batches of 16
  EXPECT_EQ(b.size(), 9u);  // shards of 34, 33, 33
}

TEST_F(ShardTest, StepOffsetShiftsTelemetry) {
  const TrainConfig tc = small_train();
  TelemetryLog a, b;
  mini_batch_iterative_dpo(world.matrix.base(), world.spec, data, tc, 1, a);
  mini_batch_iterative_dpo(world.matrix.base(), world.spec, data, tc, 1, b, 40);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i].step, a[i].step + 40);
}

TEST(Trainer, OuterLoopAccounting) {
  const World w = make_world(small_world());
  const Judge j = make_oracle_judge(w.truth, w.spec);
  const TrainConfig tc = small_train();
  TelemetryLog log;
  std::vector<StageSummary> summaries;
  const auto stages = tso_outer_loop(w.matrix, w.prompts, j, tc, small_pipeline(), log, &summaries);
  ASSERT_EQ(stages.size(), 3u);
  ASSERT_EQ(summaries.size(), 3u);
  std::set<std::pair<int, int>> switches;
  for (const auto& r : log) switches.insert({r.iter, r.minibatch});
  EXPECT_EQ(switches.size(), 9u);
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(log[i].step, static_cast<long>(i));
  for (const auto& s : summaries) EXPECT_EQ(s.pairs, 120u);
  EXPECT_NE(stages[0], stages[1]);
}

TEST(Trainer, SingleStageSingleShardIsPlainDpo) {
  const World w = make_world(small_world());
  const Judge j = make_oracle_judge(w.truth, w.spec);
  TrainConfig tc = small_train();
  tc.N = 1;
  tc.T = 1;
  const PipelineConfig pc = small_pipeline();
  TelemetryLog a, b;
  const auto stages = tso_outer_loop(w.matrix, w.prompts, j, tc, pc, a);
  const auto data = build_stage_data(w.matrix, w.prompts, j, pc, 1, tc.seed);
  const auto direct = mini_batch_iterative_dpo(w.matrix.base(), w.spec, data.pairs, tc, 1, b);
  ASSERT_EQ(stages.size(), 1u);
  EXPECT_EQ(stages[0], direct);
  EXPECT_EQ(a, b);
}

TEST(Trainer, StageDataRespectsTheBudget) {
  const World w = make_world(small_world());
  const Judge j = make_oracle_judge(w.truth, w.spec);
  PipelineConfig pc = small_pipeline();
  const auto d = build_stage_data(w.matrix, w.prompts, j, pc, 1, 7);
  EXPECT_EQ(d.pairs.size(), 120u);
  EXPECT_EQ(d.scored, 48u);
  EXPECT_EQ(d.expanded.chosen.size() + d.expanded.rejected.size(), 48u + 96u);
  std::map<Prompt, int> per_prompt;
  for (const auto& p : d.pairs) ++per_prompt[p.prompt];
  for (const auto& [x, n] : per_prompt) EXPECT_LE(n, 15);
  pc.evaluation_correction = false;
  const auto plain = build_stage_data(w.matrix, w.prompts, j, pc, 1, 7);
  EXPECT_EQ(plain.scored, 0u);
  EXPECT_EQ(plain.expanded.chosen.size(), 48u);
}

TEST(Trainer, EmptyStageReportsTheStage) {
  WorldConfig wc = small_world();
  wc.vocab = 2;
  wc.max_len = 1;
  wc.prompts = 2;
  wc.prompt_len = 1;
  wc.truth_scale = 0.0;
  World w = make_world(wc);
  // Every model emits eos at once, so chosen and rejected always coincide.
  for (auto& [id, p] : w.matrix.entries)
    for (std::size_t c = 0; c < p.num_contexts(); ++c) p.row(c)[0] = 1e6;
  for (std::size_t c = 0; c < w.matrix.human.num_contexts(); ++c) w.matrix.human.row(c)[0] = 1e6;
  const Judge j = make_oracle_judge(w.matrix.human, w.spec);
  try {
    TelemetryLog log;
    tso_outer_loop(w.matrix, w.prompts, j, small_train(), small_pipeline(), log);
    FAIL() << "expected an empty-dataset error";
  } catch (const EmptyDatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 1"), std::string::npos);
  }
}

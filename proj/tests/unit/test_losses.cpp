#include <gtest/gtest.h>

#include <cmath>

#include "tso/gradcheck.hpp"
#include "tso/losses.hpp"
#include "tso/world.hpp"

using namespace tso;

namespace {

long double softplus_ld(long double z) { return std::log1p(std::exp(z)); }
long double sigmoid_ld(long double z) { return 1.0L / (1.0L + std::exp(-z)); }

const LossConfig kCfg{0.1, 20.0, 10.0, 0.3, 0.2};

PairLogRatios from_margin(double h, double beta) { return {h / beta, 0.0}; }

}  // namespace

TEST(Losses, ImplicitReward) {
  EXPECT_EQ(implicit_reward(0.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(implicit_reward(2.0, 0.1), 0.2);
  EXPECT_DOUBLE_EQ(implicit_reward(-1.0, 0.1), -0.1);
}

TEST(Losses, DpoClosedForms) {
  EXPECT_NEAR(dpo_loss({0.0, 0.0}, 0.1), 0.693147, 1e-6);
  const double v = dpo_loss({2.0, -1.0}, 0.1);
  EXPECT_NEAR(v, static_cast<double>(softplus_ld(-0.3L)), 1e-15);
  EXPECT_NEAR(v, 0.554355, 1e-6);
  EXPECT_LT(dpo_loss(from_margin(40.0, 0.1), 0.1), 1e-17);
  EXPECT_NEAR(dpo_loss(from_margin(-800.0, 0.1), 0.1), 800.0, 1e-9);
}

TEST(Losses, DualClipClosedForms) {
  EXPECT_EQ(dual_clip_loss({0.0, 0.0}, kCfg), 30.0);
  EXPECT_EQ(dual_clip_loss({250.0, -150.0}, kCfg), 0.0);
  EXPECT_NEAR(dual_clip_loss({50.0, -30.0}, kCfg), 22.0, 1e-12);
}

TEST(Losses, IpoClosedForms) {
  EXPECT_NEAR(ipo_loss(from_margin(0.0, 0.1), 0.1, 0.2), 6.25, 1e-15);
  EXPECT_NEAR(ipo_loss(from_margin(2.5, 0.1), 0.1, 0.2), 0.0, 1e-24);
  EXPECT_NEAR(ipo_loss(from_margin(1.0, 0.1), 0.1, 0.2), 2.25, 1e-12);
}

TEST(Losses, CdpoClosedForms) {
  for (double eps : {0.0, 0.2, 0.45}) EXPECT_NEAR(cdpo_loss({0.0, 0.0}, 0.1, eps), 0.693147, 1e-6);
  const double v = cdpo_loss(from_margin(2.0, 0.1), 0.1, 0.3);
  EXPECT_NEAR(v, static_cast<double>(0.7L * softplus_ld(-2.0L) + 0.3L * softplus_ld(2.0L)), 1e-14);
  EXPECT_NEAR(v, 0.726928, 1e-6);
  for (double h : {-7.0, -0.4, 0.0, 1.3, 9.0})
    EXPECT_NEAR(cdpo_loss(from_margin(h, 0.1), 0.1, 0.0), dpo_loss(from_margin(h, 0.1), 0.1), 1e-15);
}

TEST(Losses, GradientScale) {
  EXPECT_EQ(grad_scale_s({1.7, 1.7}, 0.1), 0.5);
  const double s = grad_scale_s({40.0, 0.0}, 0.1);
  EXPECT_NEAR(s, static_cast<double>(sigmoid_ld(-4.0L)), 1e-16);
  EXPECT_NEAR(s, 0.017986, 1e-6);
  EXPECT_LT(grad_scale_s({1e4, 0.0}, 0.1), 1e-300);
}

TEST(Losses, Monotonicity) {
  double prev = dpo_loss(from_margin(-10.0, 0.1), 0.1);
  for (double h = -9.5; h <= 10.0; h += 0.5) {
    const double cur = dpo_loss(from_margin(h, 0.1), 0.1);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  for (double dw = -100.0; dw < 300.0; dw += 10.0) {
    EXPECT_LE(dual_clip_loss({dw + 10.0, 0.0}, kCfg), dual_clip_loss({dw, 0.0}, kCfg));
    EXPECT_GE(dual_clip_loss({0.0, dw + 10.0}, kCfg), dual_clip_loss({0.0, dw}, kCfg));
  }
}

TEST(Losses, PartialsMatchScalarDifferences) {
  const double h = 1e-6;
  for (LossKind kind : kAllLossKinds) {
    for (const PairLogRatios r : {PairLogRatios{1.3, -2.0}, PairLogRatios{-4.0, 3.5}, PairLogRatios{120.0, -40.0}}) {
      const auto d = loss_partials(kind, r, kCfg);
      const double fw = (loss_value(kind, {r.delta_w + h, r.delta_l}, kCfg) - loss_value(kind, {r.delta_w - h, r.delta_l}, kCfg)) / (2 * h);
      const double fl = (loss_value(kind, {r.delta_w, r.delta_l + h}, kCfg) - loss_value(kind, {r.delta_w, r.delta_l - h}, kCfg)) / (2 * h);
      EXPECT_NEAR(d.delta_w, fw, 1e-7) << to_string(kind);
      EXPECT_NEAR(d.delta_l, fl, 1e-7) << to_string(kind);
    }
  }
  // At the kink the hinge reports the zero subgradient.
  const auto k = loss_partials(LossKind::DualClip, {200.0, -100.0}, kCfg);
  EXPECT_EQ(k.delta_w, 0.0);
  EXPECT_EQ(k.delta_l, 0.0);
}

TEST(Losses, IdentityBatch) {
  const TabularPolicy p = random_policy(Vocabulary{4, 0}, 1, 1.0, 5);
  const PreferenceDataset batch{{Prompt{{1}}, Response{{2, 0}}, Response{{3, 3, 1}}, SourceTag::human(), SourceTag::base()},
                                {Prompt{{2}}, Response{{0}}, Response{{1, 0}}, SourceTag::human(), SourceTag::base()}};
  const auto r = batch_loss_and_grad(p, p, SeqSpec{3}, batch, LossKind::Dpo, kCfg);
  EXPECT_DOUBLE_EQ(r.mean_loss, std::log(2.0));
  EXPECT_EQ(r.mean_s(), 0.5);
  EXPECT_EQ(r.mean_reward_w(), 0.0);
  EXPECT_EQ(r.mean_reward_l(), 0.0);
}

TEST(Losses, FullyClippedBatchHasZeroGradient) {
  const Vocabulary v{4, 0};
  TabularPolicy p(v, 1), ref(v, 1);
  p.row(3)[1] = -300.0;
  ref.row(3)[2] = -300.0;
  const PreferenceDataset batch{{Prompt{{3}}, Response{{2, 0}}, Response{{1, 0}}, SourceTag::human(), SourceTag::base()}};
  const auto lr = pair_log_ratios(p, ref, SeqSpec{3}, batch[0]);
  ASSERT_GT(0.1 * lr.delta_w, 20.0);
  ASSERT_LT(0.1 * lr.delta_l, -10.0);
  const auto r = batch_loss_and_grad(p, ref, SeqSpec{3}, batch, LossKind::DualClip, kCfg);
  EXPECT_EQ(r.mean_loss, 0.0);
  for (double g : r.grad.values) EXPECT_EQ(g, 0.0);
}

TEST(Losses, BatchGradientMatchesCentralDifferences) {
  const Vocabulary v{6, 0};
  const SeqSpec spec{3};
  const auto ys = enumerate_responses(spec, v);
  const double step = 1e-5;
  for (LossKind kind : kAllLossKinds) {
    double worst = 0.0;
    int done = 0;
    for (std::uint64_t k = 0; done < 100; ++k) {
      TabularPolicy p = random_policy(v, 1, 1.0, 7000 + k);
      const TabularPolicy ref = random_policy(v, 1, 1.0, 8000 + k);
      Rng rng(9000 + k);
      PreferenceDataset batch;
      for (int i = 0; i < 16; ++i) {
        PreferencePair pair;
        pair.prompt = Prompt{{static_cast<Token>(rng.below(6)), static_cast<Token>(rng.below(6))}};
        pair.chosen = ys[rng.below(ys.size())];
        do pair.rejected = ys[rng.below(ys.size())];
        while (pair.rejected == pair.chosen);
        batch.push_back(pair);
      }
      bool near_kink = false;
      for (const auto& pair : batch) {
        const auto r = pair_log_ratios(p, ref, spec, pair);
        near_kink = near_kink || std::abs(20.0 - 0.1 * r.delta_w) < 1e-3 || std::abs(10.0 + 0.1 * r.delta_l) < 1e-3;
      }
      if (kind == LossKind::DualClip && near_kink) continue;
      const auto g = batch_loss_and_grad(p, ref, spec, batch, kind, kCfg).grad.values;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double saved = p.logits()[i];
        p.logits()[i] = saved + step;
        const double up = batch_loss_and_grad(p, ref, spec, batch, kind, kCfg).mean_loss;
        p.logits()[i] = saved - step;
        const double down = batch_loss_and_grad(p, ref, spec, batch, kind, kCfg).mean_loss;
        p.logits()[i] = saved;
        const double fd = (up - down) / (2 * step);
        worst = std::max(worst, std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-4}));
      }
      ++done;
    }
    EXPECT_LE(worst, 1e-5) << to_string(kind);
  }
}

TEST(Losses, LibraryGradcheckAgrees) {
  for (LossKind kind : kAllLossKinds) EXPECT_LE(gradcheck_loss(kind, kCfg, 100, 6, 3, 1e-5, 43).max_rel_error, 1e-5);
  EXPECT_TRUE(closed_form_losses_hold(43));
  EXPECT_TRUE(dual_clip_decoupling(kCfg).holds());
}

TEST(Losses, EmptyBatchIsAnInputError) {
  const TabularPolicy p(Vocabulary{4, 0}, 1);
  EXPECT_THROW(batch_loss_and_grad(p, p, SeqSpec{3}, PreferenceDataset{}, LossKind::Dpo, kCfg), InputError);
}

TEST(Losses, KindNames) {
  for (LossKind k : kAllLossKinds) EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  EXPECT_THROW(parse_loss_kind("hinge"), ConfigError);
}

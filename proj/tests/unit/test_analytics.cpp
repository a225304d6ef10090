#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "tso/analytics.hpp"
#include "tso/world.hpp"

using namespace tso;
namespace fs = std::filesystem;

namespace {

struct Moments {
  long double skew, kurt;
};

Moments oracle_moments(const std::vector<double>& xs) {
  long double mean = 0.0L;
  for (double x : xs) mean += x;
  mean /= xs.size();
  long double m2 = 0.0L, m3 = 0.0L, m4 = 0.0L;
  for (double x : xs) {
    const long double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= xs.size();
  m3 /= xs.size();
  m4 /= xs.size();
  return {m3 / std::pow(m2, 1.5L), m4 / (m2 * m2) - 3.0L};
}

const SeqSpec kSpec{3};
const Vocabulary kVocab{4, 0};

PromptSet some_prompts() {
  PromptSet ps;
  for (Token a = 0; a < 4; ++a) ps.prompts.push_back(Prompt{{a, static_cast<Token>((a + 1) % 4)}});
  ps.prompts.push_back(Prompt{{2, 2}});
  return ps;
}

}  // namespace

TEST(Analytics, MomentsOfOneToFive) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  const auto s = score_stats(xs);
  EXPECT_EQ(s.n, 5u);
  EXPECT_EQ(s.mean, 3.0);
  EXPECT_EQ(s.variance, 2.0);
  EXPECT_EQ(s.skewness, 0.0);
  EXPECT_NEAR(s.excess_kurtosis, -1.3, 1e-15);
}

TEST(Analytics, SymmetricSampleHasZeroSkew) {
  const std::vector<double> xs{4.5, 6.0, 7.5, 9.0, 6.0, 7.5, 4.5, 9.0};
  EXPECT_EQ(score_stats(xs).skewness, 0.0);
}

TEST(Analytics, MomentsMatchLongDoubleOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> xs(50 + static_cast<std::size_t>(trial) * 7);
    for (double& x : xs) x = std::exp(standard_normal(rng));
    const auto s = score_stats(xs);
    const auto o = oracle_moments(xs);
    EXPECT_NEAR(s.skewness, static_cast<double>(o.skew), 1e-12);
    EXPECT_NEAR(s.excess_kurtosis, static_cast<double>(o.kurt), 1e-11);
  }
}

TEST(Analytics, ShapeIsAffineInvariant) {
  Rng rng(9);
  std::vector<double> xs(100), ys(100);
  for (double& x : xs) x = std::exp(standard_normal(rng));
  std::transform(xs.begin(), xs.end(), ys.begin(), [](double x) { return 2.0 + 8.0 * x; });
  const auto a = score_stats(xs), b = score_stats(ys);
  EXPECT_NEAR(a.skewness, b.skewness, 1e-9);
  EXPECT_NEAR(a.excess_kurtosis, b.excess_kurtosis, 1e-9);
}

TEST(Analytics, DegenerateSamples) {
  EXPECT_THROW(score_stats(std::vector<double>{6, 6, 6, 6, 6}), InputError);
  EXPECT_THROW(score_stats(std::vector<double>{1, 2, 3}), InputError);
}

TEST(Analytics, ProxyOfTruthIsZero) {
  const TabularPolicy truth = random_policy(kVocab, 1, 2.0, 4);
  EXPECT_NEAR(alignment_proxy(truth, truth, kSpec, some_prompts()), 0.0, 1e-15);
}

TEST(Analytics, ProxyOrdersQualityGrades) {
  const TabularPolicy truth = random_policy(kVocab, 1, 2.0, 4);
  const auto m = make_quality_matrix(truth, kSpec, {{{1, 1}, 0.0}, {{2, 1}, 0.5}, {{3, 1}, 0.8}}, {1, 1});
  const auto ps = some_prompts();
  const double p0 = alignment_proxy(m.entries.at({1, 1}), truth, kSpec, ps);
  const double p5 = alignment_proxy(m.entries.at({2, 1}), truth, kSpec, ps);
  const double p8 = alignment_proxy(m.entries.at({3, 1}), truth, kSpec, ps);
  EXPECT_LT(p0, p5);
  EXPECT_LT(p5, p8);
  EXPECT_LT(p8, 0.0);
}

TEST(Analytics, ProxyMatchesDirectKlAverage) {
  const TabularPolicy truth = random_policy(kVocab, 1, 2.0, 4);
  const TabularPolicy q = random_policy(kVocab, 1, 1.0, 5);
  const auto ps = some_prompts();
  const auto ys = enumerate_responses(kSpec, kVocab);
  double sum = 0.0;
  for (const auto& x : ps.prompts)
    for (const auto& y : ys) {
      const double lt = log_prob(truth, kSpec, x, y);
      sum += std::exp(lt) * (lt - log_prob(q, kSpec, x, y));
    }
  EXPECT_NEAR(alignment_proxy(q, truth, kSpec, ps), -sum / static_cast<double>(ps.prompts.size()), 1e-13);
}

TEST(Analytics, ProxyIgnoresPromptOrder) {
  const TabularPolicy truth = random_policy(kVocab, 1, 2.0, 4);
  const TabularPolicy q = random_policy(kVocab, 1, 1.0, 5);
  auto ps = some_prompts();
  const double a = alignment_proxy(q, truth, kSpec, ps);
  std::reverse(ps.prompts.begin(), ps.prompts.end());
  EXPECT_EQ(alignment_proxy(q, truth, kSpec, ps), a);
}

TEST(Analytics, ProxyHonoursPromptWeights) {
  const TabularPolicy truth = random_policy(kVocab, 1, 2.0, 4);
  const TabularPolicy q = random_policy(kVocab, 1, 1.0, 5);
  PromptSet ps{{Prompt{{1}}, Prompt{{2}}}, {1.0, 0.0}};
  EXPECT_NEAR(alignment_proxy(q, truth, kSpec, ps), -kl_divergence(truth, q, kSpec, Prompt{{1}}), 1e-15);
}

TEST(Analytics, TelemetryCsv) {
  EXPECT_EQ(telemetry_csv({}), std::string(kTelemetryHeader) + "\n");
  TelemetryLog log;
  for (int i = 0; i < 8; ++i) log.push_back({i, 1, 1 + i / 4, 0.1 * i, -0.5, 0.25, 1.0 / 3.0, 1e-3});
  const std::string text = telemetry_csv(log);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 9);
  EXPECT_EQ(parse_telemetry_csv(text), log);
}

TEST(Analytics, TelemetryFiles) {
  const fs::path dir = fs::temp_directory_path() / "tso_test_analytics";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string path = (dir / "telemetry.csv").string();
  export_telemetry_csv({}, path);
  EXPECT_EQ(read_text_file(path), std::string(kTelemetryHeader) + "\n");
  EXPECT_TRUE(load_telemetry_csv(path).empty());
  EXPECT_THROW(export_telemetry_csv({}, (dir / "missing" / "sub" / "t.csv").string() + "/"), IoError);
  EXPECT_THROW(parse_telemetry_csv("step,iter\n"), ParseError);
  EXPECT_THROW(parse_telemetry_csv(std::string(kTelemetryHeader) + "\n1,2,3\n"), ParseError);
  fs::remove_all(dir);
}

TEST(Analytics, PromptStatsCsv) {
  const auto s = score_stats(std::vector<double>{1, 2, 3, 4, 5});
  EXPECT_EQ(prompt_stats_csv({{3, s}}), "prompt_id,n,mean,var,skew,kurt\n3,5,3,2,0,-1.3\n");
}

#include "fixtures.hpp"

#include "mgalign/errors.hpp"
#include "mgalign/subtext_metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace mgalign;

namespace {

TextTokens text(const Vec& summary) { return {summary.transpose(), summary}; }

std::vector<TextTokens> texts(const std::vector<Vec>& summaries) {
  std::vector<TextTokens> out;
  for (const auto& s : summaries) out.push_back(text(s));
  return out;
}

Vec e(int dim, int i) { return Vec::Unit(dim, i); }

}  // namespace

TEST(CosineSim, Examples) {
  const Vec a = (Vec(3) << 1.0, -2.0, 0.5).finished();
  EXPECT_DOUBLE_EQ(cosine_sim(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine_sim(e(3, 0), e(3, 1)), 0.0);
  EXPECT_DOUBLE_EQ(cosine_sim(a, -a), -1.0);
  EXPECT_ERROR_KIND(cosine_sim(a, Vec::Zero(3)), ErrorKind::ZeroVector);
}

TEST(SigmaScore, Examples) {
  EXPECT_DOUBLE_EQ(sigma_score(e(4, 1), e(4, 1)), 1.0);
  EXPECT_DOUBLE_EQ(sigma_score(e(4, 1), e(4, 2)), 0.5);
  EXPECT_DOUBLE_EQ(sigma_score(e(4, 1), -e(4, 1)), 0.0);
}

TEST(DeltaScore, Examples) {
  std::vector<Vec> orth = {e(3, 0), e(3, 1)};
  EXPECT_DOUBLE_EQ(delta_score(orth, 0), 0.5);
  std::vector<Vec> same = {e(3, 2), e(3, 2)};
  EXPECT_DOUBLE_EQ(delta_score(same, 1), 0.0);
  std::vector<Vec> anti = {e(3, 0), -e(3, 0), -e(3, 0)};
  EXPECT_DOUBLE_EQ(delta_score(anti, 0), 1.0);
  std::vector<Vec> one = {e(3, 0)};
  EXPECT_ERROR_KIND(delta_score(one, 0), ErrorKind::NeedTwoSubtexts);
}

TEST(TppScore, OrthogonalBasisGivesFour) {
  const auto subs = texts({e(3, 1), e(3, 2)});
  const auto b = tpp_score(text(e(3, 0)), subs, TppConfig{});
  EXPECT_NEAR(b.tpp, 4.0, 1e-12);
  EXPECT_DOUBLE_EQ(b.sigma[0], 0.5);
  EXPECT_DOUBLE_EQ(b.delta[1], 0.5);
}

TEST(TppScore, DuplicateSubtextsHitTheClamp) {
  const auto subs = texts({e(3, 1), e(3, 1)});
  const TppConfig cfg;
  const auto b = tpp_score(text(e(3, 0)), subs, cfg);
  EXPECT_DOUBLE_EQ(b.delta[0], 0.0);
  EXPECT_TRUE(std::isfinite(b.tpp));
  EXPECT_NEAR(b.tpp, 1.0 / (0.5 * cfg.epsilon), 1e-6 / cfg.epsilon);
}

TEST(TppScore, MatchesScalarOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec g = oracle::random_vec(rng, 8);
    std::vector<Vec> s = {oracle::random_vec(rng, 8), oracle::random_vec(rng, 8), oracle::random_vec(rng, 8)};
    std::vector<oracle::Row> rows;
    for (const auto& v : s) rows.push_back(oracle::row(v));
    const double expected = oracle::tpp(oracle::row(g), rows, 1e-6);
    EXPECT_NEAR(tpp_score(text(g), texts(s), TppConfig{}).tpp, expected, 1e-9 * expected);
  }
}

TEST(TppScore, ErrorsAndConfig) {
  EXPECT_ERROR_KIND(tpp_score(text(e(3, 0)), texts({e(3, 1)}), TppConfig{}), ErrorKind::NeedTwoSubtexts);
  EXPECT_ERROR_KIND(tpp_score(text(e(3, 0)), texts({e(3, 1), Vec::Zero(3)}), TppConfig{}), ErrorKind::ZeroVector);
  TppConfig bad;
  bad.epsilon = 0.5;
  EXPECT_ERROR_KIND(bad.check(), ErrorKind::InvalidConfig);
  EXPECT_ERROR_KIND(Scaler::parse("power:0"), ErrorKind::InvalidConfig);
  EXPECT_ERROR_KIND(Scaler::parse("cube"), ErrorKind::InvalidConfig);
}

TEST(TppScore, ScalersApplyBeforeTheLog) {
  const auto subs = texts({e(3, 1), e(3, 2)});
  TppConfig cfg;
  cfg.alpha = Scaler::parse("power:2");
  cfg.beta = Scaler::parse("one-minus");
  // alpha(0.5) = 0.25, beta(0.5) = 0.5 for both sub-texts.
  EXPECT_NEAR(tpp_score(text(e(3, 0)), subs, cfg).tpp, 8.0, 1e-12);
  EXPECT_EQ(Scaler::parse(cfg.alpha.to_string()).exponent, 2.0);
}

TEST(TppProperties, AtLeastOneWithIdentityScalers) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 200; ++i) {
    const int n = oracle::random_int(rng, 2, 6);
    std::vector<Vec> s;
    for (int k = 0; k < n; ++k) s.push_back(oracle::random_vec(rng, 5));
    EXPECT_GE(tpp_score(text(oracle::random_vec(rng, 5)), texts(s), TppConfig{}).tpp, 1.0);
  }
}

TEST(TppProperties, InvariantToRescalingRotationAndPermutation) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int dim = 6;
    const Vec g = oracle::random_vec(rng, dim);
    std::vector<Vec> s;
    for (int k = 0; k < 4; ++k) s.push_back(oracle::random_vec(rng, dim));
    const double base = tpp_score(text(g), texts(s), TppConfig{}).tpp;

    std::vector<Vec> scaled;
    for (const auto& v : s) scaled.push_back(scale(rng) * v);
    EXPECT_NEAR(tpp_score(text(scale(rng) * g), texts(scaled), TppConfig{}).tpp, base, 1e-10 * base);

    const Mat q = Eigen::HouseholderQR<Mat>(oracle::random_mat(rng, dim, dim)).householderQ();
    std::vector<Vec> rotated;
    for (const auto& v : s) rotated.push_back(q * v);
    EXPECT_NEAR(tpp_score(text(q * g), texts(rotated), TppConfig{}).tpp, base, 1e-10 * base);

    std::vector<Vec> permuted = {s[2], s[0], s[3], s[1]};
    EXPECT_NEAR(tpp_score(text(g), texts(permuted), TppConfig{}).tpp, base, 1e-12 * base);
  }
}

TEST(SelectSubtextSet, PicksLargestTpp) {
  const Vec g = e(4, 0);
  SubtextCandidateSet cands;
  // Group 0 is orthogonal to the global and within itself (sigma = delta = 0.5).
  // Group 1 is two near-duplicates next to the global, so delta is tiny.
  const Vec near1 = (e(4, 0) + 0.1 * e(4, 1)).normalized();
  const Vec near2 = (e(4, 0) + 0.1 * e(4, 2)).normalized();
  cands.sets.push_back(texts({e(4, 1), e(4, 2)}));
  cands.sets.push_back(texts({near1, near2}));
  const auto sel = select_subtext_set(cands, text(g), TppConfig{});
  ASSERT_EQ(sel.scores.size(), 2u);
  // Direct evaluation: the chosen group is the one with the smaller mean log(sigma * delta).
  auto mean_log = [](const TppBreakdown& b) {
    double s = 0.0;
    for (std::size_t n = 0; n < b.sigma.size(); ++n) s += std::log(b.sigma[n] * b.delta[n]);
    return s / static_cast<double>(b.sigma.size());
  };
  EXPECT_LT(mean_log(sel.scores[1]), mean_log(sel.scores[0]));
  EXPECT_EQ(sel.chosen, 1u);
}

TEST(SelectSubtextSet, TiesAndSingleGroupPickIndexZero) {
  SubtextCandidateSet cands;
  cands.sets = {texts({e(3, 1), e(3, 2)}), texts({e(3, 1), e(3, 2)})};
  EXPECT_EQ(select_subtext_set(cands, text(e(3, 0)), TppConfig{}).chosen, 0u);
  cands.sets.resize(1);
  EXPECT_EQ(select_subtext_set(cands, text(e(3, 0)), TppConfig{}).chosen, 0u);
  cands.sets.clear();
  EXPECT_ERROR_KIND(select_subtext_set(cands, text(e(3, 0)), TppConfig{}), ErrorKind::EmptyCandidates);
}

TEST(SelectSubtextSet, ArgmaxSurvivesMonotoneReparameterization) {
  // power(p) on both scalers maps TPP to TPP^p, a strictly increasing transform.
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 30; ++trial) {
    SubtextCandidateSet cands;
    for (int g = 0; g < 4; ++g) {
      std::vector<Vec> s;
      for (int k = 0; k < 3; ++k) s.push_back(oracle::random_vec(rng, 5));
      cands.sets.push_back(texts(s));
    }
    const TextTokens global = text(oracle::random_vec(rng, 5));
    TppConfig cubed;
    cubed.alpha = Scaler::power(3.0);
    cubed.beta = Scaler::power(3.0);
    EXPECT_EQ(select_subtext_set(cands, global, TppConfig{}).chosen, select_subtext_set(cands, global, cubed).chosen);
  }
}

TEST(TppDatasetAverage, Examples) {
  EmbeddingDataset ds;
  ds.dim = 3;
  ds.classes.push_back({"a", text(e(3, 0)), texts({e(3, 1), e(3, 2)}), {}});
  EXPECT_NEAR(tpp_dataset_average(ds, TppConfig{}), 4.0, 1e-12);
  ds.classes.push_back({"b", text(e(3, 1)), texts({e(3, 0), e(3, 2)}), {}});
  EXPECT_NEAR(tpp_dataset_average(ds, TppConfig{}), 4.0, 1e-12);

  const auto rnd = fixtures::small_dataset(25, 0, 4, 8, 3, 3);
  double expected = 0.0;
  for (const auto& b : rnd.classes) {
    std::vector<oracle::Row> rows;
    for (const auto& s : b.subtexts) rows.push_back(oracle::row(s.summary));
    expected += oracle::tpp(oracle::row(b.global.summary), rows, 1e-6) / 3.0;
  }
  EXPECT_NEAR(tpp_dataset_average(rnd, TppConfig{}), expected, 1e-9 * expected);
}

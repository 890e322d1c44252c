#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "spherebg/random.hpp"
#include "spherebg/sampling.hpp"

using namespace spherebg;

namespace {

std::vector<double> uniforms(Rng& rng, std::size_t n) {
  std::vector<double> u(n);
  for (double& x : u) x = rng.uniform();
  return u;
}

void expect_valid(const SampleDistances& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_GE(s[i], s.near());
    EXPECT_LE(s[i], s.far());
    if (i > 0) EXPECT_LT(s[i - 1], s[i]);
  }
}

}  // namespace

TEST(Stratified, DeterministicMidpoints) {
  const auto s = stratified_sample(1.0, 2.0, 4);
  ASSERT_EQ(s.size(), 4u);
  const double expected[] = {1.125, 1.375, 1.625, 1.875};
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s[i], expected[i]);
  EXPECT_DOUBLE_EQ(stratified_sample(0.5, 3.5, 1)[0], 2.0);
}

TEST(Stratified, JitteredSamplesStayInTheirBins) {
  Rng rng(42);
  const double near = 0.5, far = 3.5;
  const int count = 48;
  for (int trial = 0; trial < 200; ++trial) {
    const auto jitter = uniforms(rng, count);
    const auto s = stratified_sample(near, far, count, jitter);
    const double w = (far - near) / count;
    for (int i = 0; i < count; ++i) {
      ASSERT_GE(s[i], near + i * w - 1e-12);
      ASSERT_LE(s[i], near + (i + 1) * w + 1e-12);
    }
    expect_valid(s);
  }
}

TEST(Stratified, Errors) {
  EXPECT_THROW(stratified_sample(2.0, 1.0, 4), Error);
  EXPECT_THROW(stratified_sample(1.0, 1.0, 4), Error);
  EXPECT_THROW(stratified_sample(1.0, 2.0, 0), Error);
  try {
    stratified_sample(2.0, 1.0, 3);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidRange);
  }
}

TEST(Importance, EqualWeightsAreUniform) {
  const auto coarse = stratified_sample(1.0, 3.0, 8);
  const std::vector<double> w(8, 0.3);
  Rng rng(7);
  const auto fine = draw_importance(coarse, w, uniforms(rng, 10000));
  constexpr int bins = 20;
  std::vector<int> hist(bins, 0);
  for (double t : fine) hist[std::min(bins - 1, static_cast<int>((t - 1.0) / 2.0 * bins))]++;
  double chi2 = 0.0;
  const double expected = 10000.0 / bins;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // 99th percentile of chi-square with 19 degrees of freedom.
  EXPECT_LT(chi2, 36.191);
}

TEST(Importance, DeltaMassStaysInItsBin) {
  const auto coarse = stratified_sample(1.0, 2.0, 4);
  const std::vector<double> w = {0.0, 0.0, 1.0, 0.0};
  Rng rng(1);
  const auto merged = importance_sample(coarse, w, uniforms(rng, 64));
  ASSERT_EQ(merged.size(), 68u);
  const auto fine = draw_importance(coarse, w, uniforms(rng, 64));
  for (double t : fine) {
    EXPECT_GE(t, 1.5);
    EXPECT_LE(t, 1.75);
  }
}

TEST(Importance, BimodalHistogramMatchesCdf) {
  const auto coarse = stratified_sample(1.0, 5.0, 4);
  const std::vector<double> w = {1.0, 0.0, 0.0, 1.0};
  Rng rng(99);
  const auto fine = draw_importance(coarse, w, uniforms(rng, 100000));
  // Monte-Carlo oracle: the exact CDF of the floored histogram, evaluated on
  // a grid of quarter-bin points.
  const double floor = kImportanceFloor;
  const double mass[4] = {1.0 + floor, floor, floor, 1.0 + floor};
  const double total = mass[0] + mass[1] + mass[2] + mass[3];
  for (double x = 1.0; x <= 5.0; x += 0.25) {
    double cdf = 0.0;
    for (int b = 0; b < 4; ++b) {
      const double lo = 1.0 + b, hi = 2.0 + b;
      cdf += mass[b] / total * std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    }
    const double emp = static_cast<double>(std::count_if(fine.begin(), fine.end(), [x](double t) { return t <= x; })) /
                       static_cast<double>(fine.size());
    EXPECT_NEAR(emp, cdf, 0.02) << "x = " << x;
  }
}

TEST(Importance, AllZeroWeightsDegradeToUniform) {
  const auto coarse = stratified_sample(1.0, 2.0, 4);
  const std::vector<double> w(4, 0.0);
  Rng rng(3);
  const auto fine = draw_importance(coarse, w, uniforms(rng, 4000));
  const auto in_first = std::count_if(fine.begin(), fine.end(), [](double t) { return t < 1.25; });
  EXPECT_NEAR(static_cast<double>(in_first) / 4000.0, 0.25, 0.03);
  EXPECT_THROW(draw_importance(coarse, std::vector<double>(3, 1.0), std::vector<double>{0.5}), Error);
}

TEST(Importance, MergePreservesCoarseSamplesAndOrdering) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto coarse = stratified_sample(0.5, 3.0, 16, uniforms(rng, 16));
    const auto w = uniforms(rng, 16);
    const auto merged = importance_sample(coarse, w, uniforms(rng, 16));
    ASSERT_EQ(merged.size(), 32u);
    expect_valid(merged);
    for (double t : coarse.t())
      ASSERT_TRUE(std::binary_search(merged.t().begin(), merged.t().end(), t));
  }
}

TEST(Deltas, FarClosure) {
  const SampleDistances s({1.0, 2.0, 4.0}, 0.5, 6.0);
  const auto d = compute_deltas(s);
  ASSERT_EQ(d.delta.size(), 3u);
  EXPECT_DOUBLE_EQ(d.delta[0], 1.0);
  EXPECT_DOUBLE_EQ(d.delta[1], 2.0);
  EXPECT_DOUBLE_EQ(d.delta[2], 2.0);
}

TEST(Deltas, BackgroundClosure) {
  const SampleDistances s({1.5}, 1.0, 2.0);
  EXPECT_DOUBLE_EQ(compute_deltas(s, 5.0).delta[0], 3.5);
}

TEST(Deltas, TelescopeAndStayPositive) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = stratified_sample(0.5, 3.5, 1 + static_cast<int>(rng.below(64)), {});
    std::vector<double> jitter(s.size());
    for (double& u : jitter) u = rng.uniform();
    const auto j = stratified_sample(0.5, 3.5, static_cast<int>(s.size()), jitter);
    const auto d = compute_deltas(j, 4.0);
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < d.delta.size(); ++i) {
      ASSERT_GT(d.delta[i], 0.0);
      sum += d.delta[i];
    }
    ASSERT_GT(d.delta.back(), 0.0);
    ASSERT_NEAR(sum, j.t().back() - j.t().front(), 1e-12);
  }
}

TEST(SampleDistances, RejectsUnsortedOrOutOfRange) {
  EXPECT_THROW(SampleDistances({2.0, 1.0}, 0.5, 3.0), Error);
  EXPECT_THROW(SampleDistances({0.1, 1.0}, 0.5, 3.0), Error);
  EXPECT_THROW(SampleDistances({}, 0.5, 3.0), Error);
}

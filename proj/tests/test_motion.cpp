#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "scvrl/motion.hpp"
#include "scvrl/synthdata.hpp"

using namespace scvrl;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Field field2d(int h, int w, std::vector<double> v) { return Field{1, h, w, std::move(v)}; }

std::vector<double> softmax_oracle(const std::vector<double>& m, double beta) {
  long double z = 0;
  for (double x : m) z += std::exp(static_cast<long double>(x) / beta);
  std::vector<double> p;
  for (double x : m) p.push_back(static_cast<double>(std::exp(static_cast<long double>(x) / beta) / z));
  return p;
}

}  // namespace

TEST(MotionField, StaticVideoIsZero) {
  VideoTensor v(3, 4, 4, 3);
  for (auto& x : v.data) x = 0.3f;
  const auto f = motion_magnitude_field(v);
  EXPECT_EQ(f.depth, 2);
  for (double x : f.data) EXPECT_EQ(x, 0.0);
}

TEST(MotionField, SinglePixelFlip) {
  VideoTensor v(2, 3, 3, 1);
  v.at(1, 1, 2, 0) = 1.0f;
  const auto f = motion_magnitude_field(v);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) EXPECT_EQ(f.at(0, y, x), (y == 1 && x == 2) ? 1.0 : 0.0);
}

TEST(MotionField, RampDifferences) {
  VideoTensor v(3, 2, 2, 3);
  const float vals[3] = {0.0f, 0.25f, 0.75f};
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < 12; ++i) v.frame(t)[i] = vals[t];
  const auto f = motion_magnitude_field(v);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      EXPECT_DOUBLE_EQ(f.at(0, y, x), 0.25);
      EXPECT_DOUBLE_EQ(f.at(1, y, x), 0.5);
    }
}

TEST(MotionField, NeedsTwoFrames) { EXPECT_THROW(motion_magnitude_field(VideoTensor(1, 2, 2, 1)), InputError); }

TEST(EdgeMap, ConstantFieldIsZero) {
  const auto e = edge_map(field2d(4, 5, std::vector<double>(20, 0.7)));
  for (double x : e.data) EXPECT_NEAR(x, 0.0, 1e-15);
}

TEST(EdgeMap, VerticalStepEdge) {
  // 5x5, columns 0-1 zero, columns 2-4 one: Gx = [1 2 1]^T x [-1 0 1] gives 4
  std::vector<double> v(25, 0.0);
  for (int y = 0; y < 5; ++y)
    for (int x = 2; x < 5; ++x) v[y * 5 + x] = 1.0;
  const auto e = edge_map(field2d(5, 5, v));
  for (int y = 1; y < 4; ++y) {
    EXPECT_DOUBLE_EQ(e.at(y, 1), 4.0);
    EXPECT_DOUBLE_EQ(e.at(y, 2), 4.0);
    EXPECT_DOUBLE_EQ(e.at(y, 0), 0.0);
    EXPECT_DOUBLE_EQ(e.at(y, 3), 0.0);
  }
}

TEST(EdgeMap, RotationEquivariant) {
  Rng r(4);
  const int n = 6;
  std::vector<double> v(n * n);
  for (auto& x : v) x = r.uniform();
  std::vector<double> rot(n * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) rot[x * n + (n - 1 - y)] = v[y * n + x];  // 90 deg clockwise
  const auto e = edge_map(field2d(n, n, v));
  const auto er = edge_map(field2d(n, n, rot));
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) EXPECT_NEAR(er.at(x, n - 1 - y), e.at(y, x), 1e-12);
}

TEST(EdgeMap, RejectsTinyField) { EXPECT_THROW(edge_map(field2d(2, 5, std::vector<double>(10, 0))), InputError); }

TEST(TopK, MedianOfLargest) {
  EXPECT_DOUBLE_EQ(top_k_median({5, 1, 4, 2, 3}, 3), 4.0);
  EXPECT_DOUBLE_EQ(top_k_median({5, 1, 4, 2, 3}, 2), 4.5);
  EXPECT_DOUBLE_EQ(top_k_median({1, 1, 1}, 10), 1.0);
  EXPECT_DOUBLE_EQ(median({3, 1, 2, 10}), 2.5);
}

TEST(Sampler, SoftmaxOracle) {
  const auto p = window_probabilities({1, 2, 3}, 5);
  const auto o = softmax_oracle({1, 2, 3}, 5);
  const double expect[3] = {0.2693, 0.3290, 0.4017};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(p[i], o[i], 1e-15);
    EXPECT_NEAR(p[i], expect[i], 1e-4);  // quoted to 4 decimals
  }
}

TEST(Sampler, ShiftInvariantAndInfiniteBetaUniform) {
  const auto a = window_probabilities({1, 2, 3}, 5);
  const auto b = window_probabilities({101, 102, 103}, 5);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  for (double p : window_probabilities({1, 7, 3, 0}, kInf)) EXPECT_EQ(p, 0.25);
}

TEST(Sampler, EntropyGrowsWithBeta) {
  const std::vector<double> m{0.1, 0.9, 0.4, 2.0};
  double prev = 0;
  for (double beta : {0.1, 0.5, 1.0, 5.0, 50.0}) {
    const double h = entropy(window_probabilities(m, beta));
    EXPECT_GE(h, prev);
    prev = h;
  }
  EXPECT_LE(prev, std::log(4.0));
}

TEST(Sampler, SingleWindowAlwaysZero) {
  MotionProfile p;
  p.amplitudes = {0.4};
  p.probabilities = {1.0};
  Rng r(0);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(sample_window(p, r), 0);
}

TEST(Sampler, EmpiricalLawWithin3Sigma) {
  const int n = 100000;
  for (const auto& probs : {std::vector<double>{0.25, 0.25, 0.25, 0.25}, window_probabilities({1, 2, 3}, 5)}) {
    MotionProfile p;
    p.probabilities = probs;
    p.amplitudes.assign(probs.size(), 0);
    Rng r(123);
    std::vector<int> hist(probs.size(), 0);
    for (int i = 0; i < n; ++i) ++hist[sample_window(p, r)];
    for (std::size_t i = 0; i < probs.size(); ++i)
      EXPECT_NEAR(hist[i] / double(n), probs[i], 3 * std::sqrt(probs[i] * (1 - probs[i]) / n));
  }
}

TEST(Profile, StaticVideoUniform) {
  VideoTensor v(24, 16, 16, 3, 8);
  for (auto& x : v.data) x = 0.5f;
  for (double beta : {0.5, 5.0, kInf}) {
    const auto p = profile(v, 10, beta);
    ASSERT_EQ(p.windows(), 3);
    for (double m : p.amplitudes) EXPECT_EQ(m, 0.0);
    for (double q : p.probabilities) EXPECT_NEAR(q, 1.0 / 3, 1e-15);
  }
}

TEST(Profile, MovingWindowPreferred) {
  DatasetSpec s;
  s.n_videos = 32;
  s.static_window_prob = 0.5;
  int checked = 0;
  for (const auto& x : generate(s).samples) {
    const auto& g = x.motion_ground_truth;
    const auto p = profile(x.video, 82, 5.0);
    for (std::size_t a = 0; a < g.size(); ++a)
      for (std::size_t b = 0; b < g.size(); ++b)
        if (g[a] > 0 && g[b] == 0) {
          EXPECT_GT(p.probabilities[a], p.probabilities[b]);
          EXPECT_EQ(p.amplitudes[b], 0.0);
          ++checked;
        }
  }
  EXPECT_GT(checked, 0);
}

TEST(Profile, Deterministic) {
  DatasetSpec s;
  s.n_videos = 1;
  const auto v = generate(s).samples[0].video;
  const auto a = profile(v, 82, 5), b = profile(v, 82, 5);
  EXPECT_EQ(a.amplitudes, b.amplitudes);
  EXPECT_EQ(a.probabilities, b.probabilities);
}

TEST(Profile, TopKClampedWithWarning) {
  VideoTensor v(8, 4, 4, 1, 8);
  const auto p = profile(v, 100, 5);
  EXPECT_EQ(p.top_k_used, 16);
  ASSERT_EQ(p.warnings.size(), 1u);
}

TEST(Profile, Errors) {
  VideoTensor v(4, 4, 4, 1, 8);
  EXPECT_THROW(profile(v, 10, 5), InputError);  // shorter than one window
  VideoTensor w(8, 4, 4, 1, 8);
  EXPECT_THROW(profile(w, 0, 5), InputError);
  EXPECT_THROW(profile(w, 3, 0), InputError);
}

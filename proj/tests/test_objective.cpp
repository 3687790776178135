#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace scvrl;
using fixtures::micro_config;

namespace {

// Independent scalar oracle in extended precision.
long double oracle(long double pos, const std::vector<long double>& negs, long double tau) {
  long double z = std::exp(pos / tau);
  for (auto n : negs) z += std::exp(n / tau);
  return -std::log(std::exp(pos / tau) / z);
}

// Unit anchor e0, and unit vectors with the requested dot product against it.
ContrastiveBatch batch_with_dots(double pos, const std::vector<double>& negs) {
  const int dim = 2 + static_cast<int>(negs.size());
  ContrastiveBatch b{dim, std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0), {}};
  b.anchor[0] = 1;
  b.positive[0] = pos;
  b.positive[1] = std::sqrt(1 - pos * pos);
  for (std::size_t i = 0; i < negs.size(); ++i) {
    std::vector<double> n(dim, 0.0);
    n[0] = negs[i];
    n[2 + i] = std::sqrt(1 - negs[i] * negs[i]);
    b.negatives.insert(b.negatives.end(), n.begin(), n.end());
  }
  return b;
}

std::vector<double> unit(int d, Rng& r) {
  std::vector<double> v(d);
  double n = 0;
  for (auto& x : v) {
    x = r.normal();
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

double dot(const std::vector<double>& a, const double* b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(InfoNce, SymmetricPairIsLn2) {
  for (double tau : {0.05, 0.1, 1.0, 7.0}) EXPECT_NEAR(info_nce(batch_with_dots(0.3, {0.3}), tau), std::log(2.0), 1e-14);
}

TEST(InfoNce, TwelveOrthogonalNegatives) {
  const double l = info_nce(batch_with_dots(1.0, std::vector<double>(12, 0.0)), 0.1);
  EXPECT_NEAR(l, std::log1p(12 * std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(l, 5.44651e-4, 1e-9);
}

TEST(InfoNce, TwoMixedNegatives) {
  const double l = info_nce(batch_with_dots(0.5, {0.2, -0.3}), 0.1);
  EXPECT_NEAR(l, std::log((std::exp(5.0) + std::exp(2.0) + std::exp(-3.0)) / std::exp(5.0)), 1e-14);
  EXPECT_NEAR(l, 0.0489069, 1e-7);
}

TEST(InfoNce, MatchesOracleOnRandomInstances) {
  Rng r(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + static_cast<int>(r.uniform_int(15));
    const int n = 1 + static_cast<int>(r.uniform_int(20));
    const double tau = r.uniform(0.02, 2.0);
    ContrastiveBatch b{d, unit(d, r), unit(d, r), {}};
    std::vector<long double> negs;
    for (int i = 0; i < n; ++i) {
      const auto u = unit(d, r);
      b.negatives.insert(b.negatives.end(), u.begin(), u.end());
      negs.push_back(dot(b.anchor, u.data()));
    }
    const auto want = oracle(dot(b.anchor, b.positive.data()), negs, tau);
    ASSERT_LE(std::abs(info_nce(b, tau) - want) / want, 1e-6) << "trial " << trial;
  }
}

TEST(InfoNce, LargeLogitsStayFinite) {
  const double l = info_nce(batch_with_dots(-1.0, {1.0}), 1e-4);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, 2e4, 1e-6);
}

TEST(InfoNce, PositiveAndMonotoneInNegatives) {
  double prev = 0;
  for (double n : {-0.9, -0.5, 0.0, 0.4, 0.8}) {
    const double l = info_nce(batch_with_dots(0.6, {n, 0.1}), 0.2);
    EXPECT_GT(l, 0.0);
    EXPECT_GT(l, prev);
    prev = l;
  }
}

TEST(InfoNce, ShiftInvariantAtLogitLevel) {
  const std::vector<double> l{1.3, -0.2, 0.7, 2.1};
  auto shifted = l;
  for (auto& x : shifted) x += 500;
  EXPECT_NEAR(info_nce_from_logits(l), info_nce_from_logits(shifted), 1e-12);
}

TEST(InfoNce, GradientsMatchClosedForm) {
  Rng r(2);
  const int d = 5;
  ContrastiveBatch b{d, unit(d, r), unit(d, r), {}};
  for (int i = 0; i < 3; ++i) {
    const auto u = unit(d, r);
    b.negatives.insert(b.negatives.end(), u.begin(), u.end());
  }
  const double tau = 0.3;
  const auto res = info_nce_with_grad(b, tau);
  std::vector<double> logits{dot(b.anchor, b.positive.data()) / tau};
  for (int i = 0; i < 3; ++i) logits.push_back(dot(b.anchor, &b.negatives[i * d]) / tau);
  double z = 0;
  for (double l : logits) z += std::exp(l);
  std::vector<double> p;
  for (double l : logits) p.push_back(std::exp(l) / z);
  for (int c = 0; c < d; ++c) {
    double ga = (p[0] - 1) * b.positive[c];
    for (int i = 0; i < 3; ++i) ga += p[i + 1] * b.negatives[i * d + c];
    EXPECT_NEAR(res.d_anchor[c], ga / tau, 1e-12);
    EXPECT_NEAR(res.d_positive[c], (p[0] - 1) * b.anchor[c] / tau, 1e-12);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(res.d_negatives[i * d + c], p[i + 1] * b.anchor[c] / tau, 1e-12);
  }
}

TEST(InfoNce, Errors) {
  auto b = batch_with_dots(0.5, {});
  try {
    info_nce(b, 0.1);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_STREQ(e.what(), "at least one negative required");
  }
  EXPECT_THROW(info_nce(batch_with_dots(0.5, {0.1}), 0.0), InputError);
  auto bad = batch_with_dots(0.5, {0.1});
  bad.anchor[0] = 2;
  EXPECT_THROW(info_nce(bad, 0.1), InputError);
}

TEST(TotalLoss, Composition) {
  EXPECT_DOUBLE_EQ(total_loss(0.5, 0.25, 1.0), 0.75);
  EXPECT_DOUBLE_EQ(total_loss(0.5, 0.25, 0.0), 0.5);
  const double a = std::log1p(12 * std::exp(-10.0));
  const double b = info_nce(batch_with_dots(0.5, {0.2, -0.3}), 0.1);
  EXPECT_NEAR(total_loss(a, b, 1.0), a + std::log1p(std::exp(-3.0) + std::exp(-8.0)), 1e-14);
}

class Routing : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = micro_config();
    Rng r(3);
    online = init_model<float>(BackboneConfig::from(cfg), r);
    fixtures::perturb(online, r, 0.1);
    momentum = online;
    fixtures::perturb(momentum, r, 0.02);
    clip = fixtures::random_clip(cfg.clip_length, 20, 20, 3, r);
    other = fixtures::random_clip(cfg.clip_length, 20, 20, 3, r);
    bank = MemoryBank(8, cfg.head_out);
    bank.enqueue(fixtures::random_bank(5, cfg.head_out, r));
  }

  static double group_norm(const ModelState<float>& s, const Gradients<float>& g, const std::string& prefix) {
    double n = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (s.params()[i].name.starts_with(prefix))
        for (float v : g[i]) n += static_cast<double>(v) * v;
    return std::sqrt(n);
  }

  Config cfg;
  ModelState<float> online, momentum;
  VideoTensor clip, other;
  MemoryBank bank;
};

TEST_F(Routing, TemporalLossLeavesVisualHeadUntouched) {
  Rng r(4);
  const auto perms = sample_negative_perms(2, 1, r);
  for (int trial = 0; trial < 5; ++trial) {
    const auto out = temporal_loss(online, momentum, clip, AugmentPolicy::from(cfg), perms, cfg, r);
    EXPECT_TRUE(std::isfinite(out.loss));
    EXPECT_GT(out.loss, 0.0);
    EXPECT_EQ(group_norm(online, out.gradients, "head_v."), 0.0);
    EXPECT_GT(group_norm(online, out.gradients, "head_t."), 0.0);
    EXPECT_GT(group_norm(online, out.gradients, "s1."), 0.0);
  }
}

TEST_F(Routing, VisualLossLeavesTemporalHeadUntouched) {
  Rng r(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto out = visual_loss(online, momentum, clip, other, bank, AugmentPolicy::from(cfg), cfg, r);
    EXPECT_EQ(group_norm(online, out.gradients, "head_t."), 0.0);
    EXPECT_GT(group_norm(online, out.gradients, "head_v."), 0.0);
    double n = 0;
    for (float v : out.key_embedding) n += static_cast<double>(v) * v;
    EXPECT_NEAR(n, 1.0, 1e-5);
  }
}

TEST_F(Routing, BankHoldingThePositiveGivesLn2) {
  const auto policy = AugmentPolicy::identity(cfg.crop_size);
  Rng r0(6);
  const auto key = embed(momentum, apply_policy(other, policy, r0), Head::Visual);
  MemoryBank one(1, cfg.head_out);
  one.enqueue(key);
  Rng r(6);
  const auto out = visual_loss(online, momentum, clip, other, one, policy, cfg, r);
  EXPECT_NEAR(out.loss, std::log(2.0), 1e-6);
}

TEST_F(Routing, IdentityNegativeRejected) {
  Rng r(7);
  EXPECT_THROW(temporal_loss(online, momentum, clip, AugmentPolicy::from(cfg),
                             {GroupPermutation::identity(2, 2)}, cfg, r),
               InputError);
  EXPECT_THROW(temporal_loss(online, momentum, clip, AugmentPolicy::from(cfg), {}, cfg, r), InputError);
}

TEST_F(Routing, EmptyBankRejected) {
  Rng r(8);
  try {
    visual_loss(online, momentum, clip, other, MemoryBank(4, cfg.head_out), AugmentPolicy::from(cfg), cfg, r);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_STREQ(e.what(), "bank must be warmed before visual loss");
  }
}

TEST_F(Routing, FixedObjectiveLeavesMomentumUnchanged) {
  Rng r(9);
  const auto policy = AugmentPolicy::identity(cfg.crop_size);
  const auto a = apply_policy(clip, policy, r);
  const auto perms = sample_negative_perms(2, 1, r);
  const auto negs = bank.negatives();
  const auto before = momentum;
  const auto out = total_loss_fixed(online, momentum, a, a, a, perms, negs, cfg);
  EXPECT_EQ(momentum, before);
  EXPECT_EQ(out.gradients.size(), online.params().size());
}

#include <gtest/gtest.h>

#include <deque>

#include "fixtures.hpp"

using namespace scvrl;

namespace {

ModelState<double> scalar_state(double v) {
  ModelState<double> s;
  s.add("theta", 1, 1, true);
  s["theta"].data[0] = v;
  return s;
}

std::vector<float> unit_key(int dim, Rng& r) { return fixtures::random_unit(dim, r); }

}  // namespace

TEST(Ema, ThreeStepsOnScalar) {
  auto m = scalar_state(1.0);
  const auto o = scalar_state(0.0);
  for (int k = 0; k < 3; ++k) ema_update(m, o, 0.999);
  EXPECT_NEAR(m["theta"].data[0], 0.997002999, 1e-15);
}

TEST(Ema, EndpointCoefficients) {
  Rng r(1);
  const auto cfg = fixtures::micro_config();
  auto a = init_model<double>(BackboneConfig::from(cfg), r);
  auto b = init_model<double>(BackboneConfig::from(cfg), r);
  auto keep = a;
  ema_update(keep, b, 1.0);
  EXPECT_EQ(keep, a);
  auto copy = a;
  ema_update(copy, b, 0.0);
  EXPECT_EQ(copy, b);
}

TEST(Ema, GeometricDecayWithFrozenOnline) {
  Rng r(2);
  const auto cfg = fixtures::micro_config();
  auto m = init_model<double>(BackboneConfig::from(cfg), r);
  auto o = init_model<double>(BackboneConfig::from(cfg), r);
  fixtures::perturb(o, r, 0.5);
  auto distance = [&] {
    double d = 0;
    for (std::size_t i = 0; i < m.params().size(); ++i)
      for (std::size_t j = 0; j < m.params()[i].data.size(); ++j) {
        const double x = m.params()[i].data[j] - o.params()[i].data[j];
        d += x * x;
      }
    return std::sqrt(d);
  };
  const double d0 = distance();
  for (int k = 1; k <= 100; ++k) {
    ema_update(m, o, 0.999);
    ASSERT_NEAR(distance() / (std::pow(0.999, k) * d0), 1.0, 1e-12) << "k=" << k;
  }
}

TEST(Ema, Errors) {
  auto m = scalar_state(1.0);
  EXPECT_THROW(ema_update(m, scalar_state(0.0), 1.5), InputError);
  EXPECT_THROW(ema_update(m, scalar_state(0.0), -0.1), InputError);
  ModelState<double> other;
  other.add("theta", 1, 2, true);
  try {
    ema_update(m, other, 0.5);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("theta"), std::string::npos);
  }
}

TEST(Bank, FourKeysIntoThree) {
  MemoryBank b(3, 2);
  const std::vector<std::vector<float>> k{{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  for (const auto& x : k) b.enqueue(x);
  const auto n = b.negatives();
  ASSERT_EQ(n.rows, 3);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(std::vector<float>(n.row(r), n.row(r) + 2), k[r + 1]);
}

TEST(Bank, EmptyThenBatch) {
  MemoryBank b(8, 4);
  EXPECT_EQ(b.count(), 0);
  EXPECT_THROW(b.negatives(), InputError);
  Rng r(3);
  b.enqueue(fixtures::random_bank(5, 4, r));
  EXPECT_EQ(b.count(), 5);
}

TEST(Bank, SnapshotIsCopy) {
  MemoryBank b(4, 3);
  Rng r(4);
  b.enqueue(unit_key(3, r));
  const auto snap = b.negatives();
  const auto before = snap;
  for (int i = 0; i < 6; ++i) b.enqueue(unit_key(3, r));
  EXPECT_EQ(snap, before);
  EXPECT_EQ(snap.rows, 1);
}

TEST(Bank, RejectsNonUnitAndWrongDimension) {
  MemoryBank b(4, 2);
  EXPECT_THROW(b.enqueue(std::vector<float>{1.0f, 1.0f}), InputError);
  EXPECT_THROW(b.enqueue(std::vector<float>{1.0f}), InputError);
  EXPECT_NO_THROW(b.enqueue(std::vector<float>{1.00005f, 0.0f}));
  EXPECT_THROW(MemoryBank(0, 2), InputError);
}

TEST(Bank, ShadowListOracle) {
  for (int cap : {1, 8, 1024}) {
    MemoryBank b(cap, 4);
    std::deque<std::vector<float>> shadow;
    Rng r(100 + cap);
    long total = 0;
    for (int op = 0; op < 10000; ++op) {
      if (r.bernoulli(0.7)) {
        const int n = 1 + static_cast<int>(r.uniform_int(4));
        for (int i = 0; i < n; ++i) {
          auto k = unit_key(4, r);
          b.enqueue(k);
          shadow.push_back(k);
          if (static_cast<int>(shadow.size()) > cap) shadow.pop_front();
          ++total;
        }
      } else if (total > 0) {
        const auto snap = b.negatives();
        ASSERT_EQ(snap.rows, static_cast<int>(std::min<long>(total, cap)));
        ASSERT_EQ(static_cast<std::size_t>(snap.rows), shadow.size());
        for (int i = 0; i < snap.rows; ++i)
          ASSERT_EQ(std::vector<float>(snap.row(i), snap.row(i) + 4), shadow[i]) << "cap " << cap << " op " << op;
      }
      ASSERT_LE(b.count(), cap);
    }
  }
}

TEST(Bank, RestoreRoundTrip) {
  MemoryBank a(5, 3);
  Rng r(5);
  for (int i = 0; i < 7; ++i) a.enqueue(unit_key(3, r));
  MemoryBank b(5, 3);
  b.restore(a.count(), a.cursor(), a.raw());
  EXPECT_EQ(a, b);
  EXPECT_THROW(b.restore(6, 0, a.raw()), InputError);
  EXPECT_THROW(b.restore(1, 0, {}), InputError);
}

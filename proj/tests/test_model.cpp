#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace scvrl;
using fixtures::micro_config;

namespace {

// Closed-form parameter count of the backbone and heads.
std::size_t expected_parameters(const Config& c, bool separate, bool pretext) {
  const auto b = BackboneConfig::from(c);
  const auto g = b.token_grid();
  const std::size_t c0 = c.stage_channels.front();
  std::size_t n = static_cast<std::size_t>(c.temporal_kernel) * c.patch_size * c.patch_size * 3 * c0 + c0;
  n += c0 + g.t * c0 + g.h * g.w * c0;
  std::size_t din = c0;
  for (std::size_t s = 0; s < c.stage_channels.size(); ++s)
    for (int j = 0; j < c.stage_blocks[s]; ++j) {
      const std::size_t d = c.stage_channels[s], h = d * c.mlp_ratio;
      n += 2 * din + 3 * (din * d + d) + d * d + d + (din != d ? din * d : 0) + 2 * d + d * h + h + h * d + d;
      din = d;
    }
  n += 2 * din;
  const std::size_t head = din * c.head_hidden + c.head_hidden + c.head_hidden * c.head_out + c.head_out;
  n += head * (separate ? 2 : 1);
  if (pretext) n += din + 1;
  return n;
}

VideoTensor clip_for(const BackboneConfig& b, Rng& rng) {
  return fixtures::random_clip(b.clip_length, b.crop_size, b.crop_size, 3, rng);
}

}  // namespace

TEST(Model, ParameterCountMatchesClosedForm) {
  Config c;
  Rng r(0);
  const auto s = init_model<float>(BackboneConfig::from(c), r);
  EXPECT_EQ(s.parameter_count(), expected_parameters(c, true, false));
  EXPECT_EQ(s.parameter_count(), 314000u);
  c.heads_mode = HeadsMode::Shared;
  EXPECT_EQ(init_model<float>(BackboneConfig::from(c), r).parameter_count(), expected_parameters(c, false, false));
  c.objective = Objective::Pretext;
  EXPECT_EQ(init_model<float>(BackboneConfig::from(c), r).parameter_count(), expected_parameters(c, false, true));
}

TEST(Model, InitialisationConventions) {
  Rng r(1);
  const auto s = init_model<double>(BackboneConfig::from(Config{}), r);
  for (const auto& p : s.params()) {
    if (p.name.ends_with(".g")) {
      for (double v : p.data) ASSERT_EQ(v, 1.0) << p.name;
    } else if (p.name.ends_with(".b") || p.name == "cls") {
      for (double v : p.data) ASSERT_EQ(v, 0.0) << p.name;
    } else {
      double ss = 0;
      for (double v : p.data) {
        ASSERT_LE(std::abs(v), 0.04 + 1e-12) << p.name;
        ss += v * v;
      }
      if (p.data.size() > 500) {
        EXPECT_NEAR(std::sqrt(ss / p.data.size()), 0.0176, 0.002) << p.name;
      }
    }
    EXPECT_EQ(p.decay, p.name.ends_with(".w")) << p.name;
  }
}

TEST(Model, TokenGrid) {
  BackboneConfig b;
  EXPECT_EQ(b.token_grid(), (ag::Grid{4, 8, 8}));
  b.temporal_kernel = 3;
  EXPECT_EQ(b.token_grid(), (ag::Grid{4, 8, 8}));
  b.clip_length = 16;
  b.temporal_kernel = 2;
  EXPECT_EQ(b.token_grid(), (ag::Grid{8, 8, 8}));
}

TEST(Model, ForwardShapes) {
  const auto b = BackboneConfig::from(Config{});
  Rng r(2);
  const auto s = init_model<float>(b, r);
  ag::Tape<float> tp(false);
  auto P = bind(tp, s, false);
  const auto f = forward(tp, P, clip_for(b, r));
  EXPECT_EQ(tp.rows(f.repr), 1);
  EXPECT_EQ(tp.cols(f.repr), 128);
  EXPECT_EQ(f.grid, (ag::Grid{4, 1, 1}));
  EXPECT_EQ(tp.rows(f.tokens), 1 + f.grid.size());
  for (auto h : {Head::Visual, Head::Temporal}) {
    const auto z = embed(s, clip_for(b, r), h);
    ASSERT_EQ(z.size(), 16u);
    double n = 0;
    for (float v : z) n += static_cast<double>(v) * v;
    EXPECT_NEAR(n, 1.0, 1e-5);
  }
}

TEST(Model, WrongClipShapeRejected) {
  const auto b = BackboneConfig::from(Config{});
  Rng r(3);
  const auto s = init_model<float>(b, r);
  EXPECT_THROW(encode(s, VideoTensor(6, 32, 32, 3)), InputError);
  EXPECT_THROW(encode(s, VideoTensor(8, 16, 16, 3)), InputError);
}

TEST(Model, DeterministicInit) {
  const auto b = BackboneConfig::from(Config{});
  Rng a(7), c(7), d(8);
  EXPECT_EQ(init_model<float>(b, a), init_model<float>(b, c));
  EXPECT_FALSE(init_model<float>(b, c) == init_model<float>(b, d));
}

TEST(Model, SharedHeadsReuseVisualParameters) {
  Config c;
  c.heads_mode = HeadsMode::Shared;
  const auto b = BackboneConfig::from(c);
  Rng r(4);
  const auto s = init_model<float>(b, r);
  EXPECT_FALSE(s.has("head_t.fc1.w"));
  const auto clip = clip_for(b, r);
  EXPECT_EQ(embed(s, clip, Head::Visual), embed(s, clip, Head::Temporal));
}

TEST(Model, MeanPoolingDiffersFromCls) {
  Config c;
  Rng r(5);
  auto s = init_model<float>(BackboneConfig::from(c), r);
  const auto clip = clip_for(s.config(), r);
  c.pooling_mode = PoolingMode::AVG;
  auto t = init_model<float>(BackboneConfig::from(c), r);
  t.params() = s.params();
  EXPECT_NE(encode(s, clip), encode(t, clip));
}

TEST(Model, CastRoundTrip) {
  Rng r(6);
  const auto s = init_model<float>(BackboneConfig::from(Config{}), r);
  EXPECT_EQ(s.cast<double>().cast<float>(), s);
}

TEST(Model, NonFiniteActivationRaises) {
  Rng r(7);
  auto s = init_model<float>(BackboneConfig::from(Config{}), r);
  s["cube.b"].data[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(encode(s, clip_for(s.config(), r)), NumericalError);
}

// Frames of group j, and only those, feed temporal token j when k_t equals
// the stride; a 3-frame kernel with padding overlaps neighbouring groups.
TEST(CubeProjection, GroupLocalityWithPairKernel) {
  Config c;
  Rng r(8);
  const auto s = init_model<float>(BackboneConfig::from(c), r);
  const auto clip = clip_for(s.config(), r);
  const auto base = cube_project(s, clip);
  const auto g = s.config().token_grid();
  const std::size_t per_t = static_cast<std::size_t>(g.h) * g.w * c.stage_channels.front();
  for (int group = 0; group < c.clip_length / 2; ++group) {
    auto pert = clip;
    for (int f = 2 * group; f < 2 * group + 2; ++f)
      for (std::size_t i = 0; i < pert.frame_size(); ++i) pert.frame(f)[i] = 1.0f - pert.frame(f)[i];
    const auto out = cube_project(s, pert);
    for (int t = 0; t < g.t; ++t) {
      bool same = true;
      for (std::size_t i = t * per_t; i < (t + 1) * per_t; ++i) same = same && out[i] == base[i];
      EXPECT_EQ(same, t != group) << "group " << group << " token " << t;
    }
  }
}

TEST(CubeProjection, TripleKernelSpreadsAcrossTokens) {
  Config c;
  c.temporal_kernel = 3;
  Rng r(9);
  const auto s = init_model<float>(BackboneConfig::from(c), r);
  const auto clip = clip_for(s.config(), r);
  const auto base = cube_project(s, clip);
  const auto g = s.config().token_grid();
  const std::size_t per_t = static_cast<std::size_t>(g.h) * g.w * c.stage_channels.front();
  int widest = 0;
  for (int group = 0; group < c.clip_length / 2; ++group) {
    auto pert = clip;
    for (int f = 2 * group; f < 2 * group + 2; ++f)
      for (std::size_t i = 0; i < pert.frame_size(); ++i) pert.frame(f)[i] = 1.0f - pert.frame(f)[i];
    const auto out = cube_project(s, pert);
    int changed = 0;
    for (int t = 0; t < g.t; ++t)
      for (std::size_t i = t * per_t; i < (t + 1) * per_t; ++i)
        if (out[i] != base[i]) {
          ++changed;
          break;
        }
    widest = std::max(widest, changed);
  }
  EXPECT_GE(widest, 2);
}

TEST(CubeProjection, MatchesDirectConvolution) {
  Config c;
  c.temporal_kernel = 3;
  Rng r(10);
  const auto s = init_model<double>(BackboneConfig::from(c), r);
  const auto clip = clip_for(s.config(), r);
  const auto out = cube_project(s, clip);
  const auto g = s.config().token_grid();
  const int p = c.patch_size, c0 = c.stage_channels.front();
  const auto& w = s["cube.w"];
  for (int t = 0; t < g.t; t += 3)
    for (int y = 0; y < g.h; y += 3)
      for (int x = 0; x < g.w; x += 5)
        for (int o = 0; o < c0; o += 7) {
          double acc = s["cube.b"].data[o];
          for (int dt = 0; dt < 3; ++dt) {
            const int ft = 2 * t - 1 + dt;
            if (ft < 0 || ft >= clip.frames) continue;
            for (int dy = 0; dy < p; ++dy)
              for (int dx = 0; dx < p; ++dx)
                for (int ch = 0; ch < 3; ++ch) {
                  const double px = (clip.at(ft, y * p + dy, x * p + dx, ch) - kPixelMean) / kPixelStd;
                  acc += px * w.data[(((dt * p + dy) * p + dx) * 3 + ch) * c0 + o];
                }
          }
          EXPECT_NEAR(out[((static_cast<std::size_t>(t) * g.h + y) * g.w + x) * c0 + o], acc, 1e-10);
        }
}

TEST(ModelGradients, FullModelFiniteDifferences) {
  const auto cfg = micro_config();
  Rng r(11);
  auto online = init_model<double>(BackboneConfig::from(cfg), r);
  fixtures::perturb(online, r, 0.2);
  auto momentum = online;
  fixtures::perturb(momentum, r, 0.05);
  const auto b = online.config();
  const auto anchor = clip_for(b, r), tpos = clip_for(b, r), vpos = clip_for(b, r);
  const auto perms = sample_negative_perms(2, 1, r);
  const auto bank = fixtures::random_bank(6, cfg.head_out, r);
  auto loss = [&](const ModelState<double>& s) {
    return total_loss_fixed(s, momentum, anchor, tpos, vpos, perms, bank, cfg).loss;
  };
  auto grad = [&](const ModelState<double>& s) {
    return total_loss_fixed(s, momentum, anchor, tpos, vpos, perms, bank, cfg).gradients;
  };
  for (const auto& e : fixtures::finite_difference_errors(online, loss, grad, 1e-5, 1e-5))
    EXPECT_LE(e.relative, 1e-4) << e.name;
}

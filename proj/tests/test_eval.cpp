#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace scvrl;

namespace {

Config eval_config() {
  Config c = fixtures::micro_config();
  c.probe_epochs = 20;
  c.probe_batch = 8;
  c.seed = 3;
  return c;
}

const Dataset& eval_dataset() {
  static const Dataset d = [] {
    DatasetSpec s;
    s.n_videos = 24;
    s.resolution = 16;
    s.video_length_frames = 16;
    s.seed = 11;
    return generate(s);
  }();
  return d;
}

const ModelState<float>& eval_model() {
  static const ModelState<float> m = init_train_state(eval_config()).online;
  return m;
}

// Four Gaussian blobs in 3-D, one per class, well separated.
FeatureSet blobs(int per_class, Rng& r) {
  FeatureSet f{3, {}, {}};
  const double centres[4][3] = {{4, 0, 0}, {0, 4, 0}, {0, 0, 4}, {-4, -4, -4}};
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < per_class; ++i) {
      for (int c = 0; c < 3; ++c) f.x.push_back(centres[k][c] + 0.3 * r.normal());
      f.y.push_back(k);
    }
  return f;
}

}  // namespace

TEST(Probe, SeparableBlobsAreLearned) {
  Rng r(1);
  const auto train = blobs(20, r), test = blobs(10, r);
  auto cfg = eval_config();
  cfg.probe_epochs = 50;
  const auto p = train_probe(train, 4, cfg, Rng(2));
  const auto res = evaluate_probe(p, test);
  EXPECT_EQ(res.top1, 1.0);
  EXPECT_EQ(res.n_eval, 40);
  for (double a : res.per_class) EXPECT_EQ(a, 1.0);
}

TEST(Probe, DeterministicGivenRng) {
  Rng r(3);
  const auto f = blobs(10, r);
  const auto a = train_probe(f, 4, eval_config(), Rng(4));
  const auto b = train_probe(f, 4, eval_config(), Rng(4));
  EXPECT_EQ(a.w, b.w);
  EXPECT_EQ(a.b, b.b);
}

TEST(Probe, MissingClassRejected) {
  Rng r(5);
  auto f = blobs(5, r);
  f = f.subset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  try {
    train_probe(f, 4, eval_config(), Rng(0));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_STREQ(e.what(), "class 2 absent from training split");
  }
}

TEST(Probe, AbsentEvalClassIsNan) {
  Rng r(6);
  const auto f = blobs(3, r).subset({0, 1, 2});
  const auto res = evaluate_probe(LinearProbe::constant(3, 4, 0), f);
  EXPECT_EQ(res.top1, 1.0);
  EXPECT_TRUE(std::isnan(res.per_class[1]));
  EXPECT_EQ(res.per_class_count, (std::vector<int>{3, 0, 0, 0}));
}

TEST(Split, StratifiedAndDisjoint) {
  const auto& d = eval_dataset();
  const auto [tr, te] = split_stratified(d, 0.25, Rng(7));
  EXPECT_EQ(tr.size() + te.size(), d.size());
  std::vector<int> ctr(4, 0), cte(4, 0);
  for (const auto& s : tr.samples) ++ctr[s.label];
  for (const auto& s : te.samples) ++cte[s.label];
  for (int k = 0; k < 4; ++k) EXPECT_EQ(cte[k], static_cast<int>(std::lround(0.25 * (ctr[k] + cte[k]))));
  std::set<int> ids;
  for (const auto& s : tr.samples) ids.insert(s.id);
  for (const auto& s : te.samples) EXPECT_FALSE(ids.count(s.id));
}

TEST(ShuffleEval, IdentityShuffleHasZeroDrop) {
  const auto cfg = eval_config();
  const auto& d = eval_dataset();
  const auto p = linear_probe(eval_model(), d, d, cfg).probe;
  const auto r = shuffle_eval(eval_model(), p, d, cfg, Rng(8), true);
  EXPECT_EQ(r.drop, 0.0);
  EXPECT_EQ(r.acc_normal, r.acc_shuffled);
}

TEST(ShuffleEval, ConstantProbeHasZeroDrop) {
  const auto cfg = eval_config();
  const auto p = LinearProbe::constant(eval_model().config().repr_dim(), 4, 2);
  const auto r = shuffle_eval(eval_model(), p, eval_dataset(), cfg, Rng(9));
  EXPECT_EQ(r.drop, 0.0);
  EXPECT_NEAR(r.acc_normal, 0.25, 0.2);
}

TEST(ShuffleEval, LeavesCheckpointUnmodified) {
  const auto cfg = eval_config();
  const auto before = eval_model();
  const auto out = linear_probe(eval_model(), eval_dataset(), eval_dataset(), cfg);
  shuffle_eval(eval_model(), out.probe, eval_dataset(), cfg, Rng(10));
  EXPECT_EQ(eval_model(), before);
}

TEST(Retrieval, RankByCosineOracle) {
  const std::vector<std::vector<double>> g{{1, 0}, {0, 1}, {1, 1}, {2, 0}, {-1, 0}};
  const auto hits = rank_by_cosine({1, 0}, g, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].index, 0u);
  EXPECT_EQ(hits[1].index, 3u);
  EXPECT_EQ(hits[2].index, 2u);
  EXPECT_NEAR(hits[2].similarity, 1 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(rank_by_cosine({0, -1}, g, 5).back().index, 1u);
  EXPECT_THROW(rank_by_cosine({1, 0}, {}, 0), InputError);
  EXPECT_THROW(rank_by_cosine({1, 0}, g, 6), InputError);
}

TEST(Retrieval, QueryFindsItself) {
  const auto cfg = eval_config();
  const auto gallery = center_clips(eval_dataset(), cfg);
  const auto hits = retrieve_topk(eval_model(), gallery[5], gallery, 3);
  EXPECT_EQ(hits[0].index, 5u);
  EXPECT_NEAR(hits[0].similarity, 1.0, 1e-6);
  EXPECT_GE(hits[0].similarity, hits[1].similarity);
  EXPECT_GE(hits[1].similarity, hits[2].similarity);
}

TEST(Lowshot, StratifiedSubsetCounts) {
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 4);
  const auto idx = stratified_subset(labels, 0.3, Rng(1));
  EXPECT_EQ(idx.size(), 12u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  std::vector<int> per(4, 0);
  for (auto i : idx) ++per[labels[i]];
  for (int c : per) EXPECT_EQ(c, 3);
  EXPECT_EQ(stratified_subset(labels, 1.0, Rng(2)).size(), 40u);
  EXPECT_THROW(stratified_subset(labels, 0.0, Rng(3)), InputError);
  EXPECT_THROW(stratified_subset(labels, 1.5, Rng(3)), InputError);
  EXPECT_THROW(stratified_subset(labels, 0.01, Rng(3)), InputError);
}

TEST(Lowshot, FullFractionEqualsLinearProbe) {
  const auto cfg = eval_config();
  const auto& d = eval_dataset();
  const auto rows = lowshot_eval(eval_model(), d, d, {1.0, 0.5}, cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].n_train, static_cast<int>(d.size()));
  EXPECT_EQ(rows[0].accuracy, linear_probe(eval_model(), d, d, cfg).result.top1);
  EXPECT_EQ(rows[1].n_train, static_cast<int>(d.size()) / 2);
}

TEST(Lowshot, RelativeDelta) {
  const std::vector<LowshotRow> a{{0.1, 4, 0.6}, {1.0, 40, 0.5}}, b{{0.1, 4, 0.4}, {1.0, 40, 0.0}};
  const auto d = relative_delta_percent(a, b);
  EXPECT_NEAR(d[0], 50.0, 1e-12);
  EXPECT_TRUE(std::isnan(d[1]));
}

TEST(MotionReport, SameModelGivesZeroDeltas) {
  const auto cfg = eval_config();
  const auto& d = eval_dataset();
  const auto rows = motion_class_report(eval_model(), eval_model(), d, d, cfg);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) EXPECT_EQ(r.delta, 0.0);
  const auto table = format_motion_table(rows);
  EXPECT_EQ(table.rfind("Category\tMotion\tDelta Acc.\n", 0), 0u);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 5);
}

TEST(MotionReport, ClassMotionScoresPositiveForMovingClasses) {
  const auto scores = class_motion_scores(eval_dataset(), eval_config());
  for (double s : scores) EXPECT_GT(s, 0.0);
}

TEST(Features, SingleFrameShapes) {
  const auto f = single_frame_features(eval_dataset(), 3);
  EXPECT_EQ(f.dim, 16 * 16 * 3);
  EXPECT_EQ(f.size(), 24);
  EXPECT_THROW(single_frame_features(eval_dataset(), 99), InputError);
}

TEST(Features, ExtractedDimensionMatchesBackbone) {
  const auto f = extract_features(eval_model(), eval_dataset(), eval_config());
  EXPECT_EQ(f.dim, 16);
  EXPECT_EQ(f.x.size(), 24u * 16u);
}

TEST(Finetune, ProducesAccuracy) {
  auto cfg = eval_config();
  cfg.probe_batch = 12;
  const double acc = finetune(eval_model(), eval_dataset(), eval_dataset(), cfg, 1);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST(Report, HeaderLines) {
  const auto h = report_header(eval_config(), "abcd1234");
  EXPECT_NE(h.find("# config_hash\t"), std::string::npos);
  EXPECT_NE(h.find("# checkpoint\tabcd1234\n"), std::string::npos);
  EXPECT_EQ(fmt_pct(0.12345), "12.35");
}

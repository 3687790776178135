#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "scvrl/augment.hpp"
#include "scvrl/model.hpp"
#include "scvrl/motion.hpp"
#include "scvrl/synthdata.hpp"
#include "scvrl/trainer.hpp"

namespace scvrl {

/// Row-major feature matrix with labels.
struct FeatureSet {
  int dim = 0;
  std::vector<double> x;
  std::vector<int> y;

  [[nodiscard]] int size() const { return static_cast<int>(y.size()); }
  [[nodiscard]] const double* row(int i) const { return x.data() + static_cast<std::size_t>(i) * dim; }

  [[nodiscard]] FeatureSet subset(const std::vector<std::size_t>& idx) const {
    FeatureSet s{dim, {}, {}};
    for (auto i : idx) {
      s.x.insert(s.x.end(), row(static_cast<int>(i)), row(static_cast<int>(i)) + dim);
      s.y.push_back(y[i]);
    }
    return s;
  }
};

/// Maps an evaluation clip before encoding (e.g. a group shuffle).
using ClipTransform = std::function<VideoTensor(const VideoTensor&, std::size_t)>;

/// Backbone representation of the centre clip of every video.
inline FeatureSet extract_features(const ModelState<float>& s, const Dataset& d, const Config& cfg,
                                   const ClipTransform& transform = {}) {
  FeatureSet f{s.config().repr_dim(), {}, {}};
  const auto policy = AugmentPolicy::identity(cfg.crop_size);
  Rng unused(0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& v = d.samples[i].video;
    auto clip = apply_policy(extract_clip(v, center_clip(v, static_cast<int>(i), cfg)), policy, unused);
    if (transform) clip = transform(clip, i);
    const auto r = encode(s, clip);
    f.x.insert(f.x.end(), r.begin(), r.end());
    f.y.push_back(d.samples[i].label);
  }
  return f;
}

/// Raw pixels of one frame per video: the input of an appearance-only
/// classifier, which cannot see motion.
inline FeatureSet single_frame_features(const Dataset& d, int frame) {
  FeatureSet f{0, {}, {}};
  for (const auto& s : d.samples) {
    const auto& v = s.video;
    if (frame < 0 || frame >= v.frames) throw InputError("frame index out of range");
    f.dim = static_cast<int>(v.frame_size());
    f.x.insert(f.x.end(), v.frame(frame), v.frame(frame) + v.frame_size());
    f.y.push_back(s.label);
  }
  return f;
}

struct ProbeResult {
  double top1 = 0;
  std::vector<double> per_class;  // NaN for classes absent from the eval set
  std::vector<int> per_class_count;
  int n_eval = 0;
};

/// Multinomial logistic regression on standardised features.
struct LinearProbe {
  int dim = 0;
  int n_classes = 0;
  std::vector<double> mean;
  std::vector<double> inv_std;
  std::vector<double> w;  // [dim x n_classes]
  std::vector<double> b;

  [[nodiscard]] std::vector<double> logits(const double* x) const {
    std::vector<double> z(b);
    for (int i = 0; i < dim; ++i) {
      const double xi = (x[i] - mean[i]) * inv_std[i];
      if (xi == 0) continue;
      for (int k = 0; k < n_classes; ++k) z[k] += xi * w[static_cast<std::size_t>(i) * n_classes + k];
    }
    return z;
  }

  [[nodiscard]] int predict(const double* x) const {
    const auto z = logits(x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  /// A probe whose prediction does not depend on its input.
  static LinearProbe constant(int dim, int n_classes, int label) {
    LinearProbe p{dim, n_classes, std::vector<double>(dim, 0), std::vector<double>(dim, 1),
                  std::vector<double>(static_cast<std::size_t>(dim) * n_classes, 0), std::vector<double>(n_classes, 0)};
    p.b[label] = 1;
    return p;
  }
};

inline ProbeResult evaluate_probe(const LinearProbe& p, const FeatureSet& f) {
  ProbeResult r;
  r.n_eval = f.size();
  std::vector<int> correct(p.n_classes, 0);
  r.per_class_count.assign(p.n_classes, 0);
  int hits = 0;
  for (int i = 0; i < f.size(); ++i) {
    const bool ok = p.predict(f.row(i)) == f.y[i];
    hits += ok;
    correct[f.y[i]] += ok;
    ++r.per_class_count[f.y[i]];
  }
  r.top1 = f.size() ? static_cast<double>(hits) / f.size() : 0.0;
  for (int k = 0; k < p.n_classes; ++k)
    r.per_class.push_back(r.per_class_count[k] ? static_cast<double>(correct[k]) / r.per_class_count[k] : std::nan(""));
  return r;
}

/// Trains a probe with Adam on softmax cross-entropy, minibatches shuffled by `rng`.
inline LinearProbe train_probe(const FeatureSet& f, int n_classes, const Config& cfg, Rng rng) {
  std::vector<int> seen(n_classes, 0);
  for (int y : f.y) ++seen[y];
  for (int k = 0; k < n_classes; ++k)
    if (!seen[k]) throw InputError("class " + std::to_string(k) + " absent from training split");
  const int d = f.dim, n = f.size();
  LinearProbe p{d, n_classes, std::vector<double>(d, 0), std::vector<double>(d, 0),
                std::vector<double>(static_cast<std::size_t>(d) * n_classes, 0), std::vector<double>(n_classes, 0)};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) p.mean[c] += f.row(i)[c] / n;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) p.inv_std[c] += (f.row(i)[c] - p.mean[c]) * (f.row(i)[c] - p.mean[c]) / n;
  for (auto& v : p.inv_std) v = 1 / std::sqrt(v + 1e-8);

  const std::size_t nw = p.w.size();
  std::vector<double> mw(nw, 0), vw(nw, 0), mb(n_classes, 0), vb(n_classes, 0), gw(nw), gb(n_classes);
  long t = 0;
  for (int epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
    for (const auto& batch : iterate(static_cast<std::size_t>(n), cfg.probe_batch, true, rng)) {
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (auto i : batch) {
        const double* x = f.row(static_cast<int>(i));
        auto z = p.logits(x);
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0;
        for (auto& v : z) s += (v = std::exp(v - mx));
        for (auto& v : z) v /= s;
        z[f.y[i]] -= 1;
        for (int c = 0; c < d; ++c) {
          const double xc = (x[c] - p.mean[c]) * p.inv_std[c];
          for (int k = 0; k < n_classes; ++k) gw[static_cast<std::size_t>(c) * n_classes + k] += xc * z[k];
        }
        for (int k = 0; k < n_classes; ++k) gb[k] += z[k];
      }
      ++t;
      const double inv = 1.0 / static_cast<double>(batch.size());
      const double bc1 = 1 - std::pow(kAdamBeta1, static_cast<double>(t));
      const double bc2 = 1 - std::pow(kAdamBeta2, static_cast<double>(t));
      auto upd = [&](double& param, double& m, double& v, double g) {
        g *= inv;
        m = kAdamBeta1 * m + (1 - kAdamBeta1) * g;
        v = kAdamBeta2 * v + (1 - kAdamBeta2) * g * g;
        param -= cfg.probe_lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
      };
      for (std::size_t j = 0; j < nw; ++j) upd(p.w[j], mw[j], vw[j], gw[j]);
      for (int k = 0; k < n_classes; ++k) upd(p.b[k], mb[k], vb[k], gb[k]);
    }
  }
  return p;
}

inline Rng probe_rng(const Config& cfg) { return Rng(cfg.seed).derive(0x9B0BEULL); }

struct ProbeOutcome {
  LinearProbe probe;
  ProbeResult result;
};

/// Frozen-backbone linear probe: fit on `train`, report on `test`.
inline ProbeOutcome linear_probe(const ModelState<float>& s, const Dataset& train, const Dataset& test, const Config& cfg) {
  const auto ftr = extract_features(s, train, cfg);
  auto probe = train_probe(ftr, train.n_classes(), cfg, probe_rng(cfg));
  return {probe, evaluate_probe(probe, extract_features(s, test, cfg))};
}

/// Deterministic stratified split: per class, a rng-chosen `test_fraction`
/// goes to the test split. Both splits keep ascending index order.
inline std::pair<Dataset, Dataset> split_stratified(const Dataset& d, double test_fraction, Rng rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < d.size(); ++i) by_class[d.samples[i].label].push_back(i);
  std::vector<bool> is_test(d.size(), false);
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx.begin(), idx.end());
    const auto k = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t j = 0; j < k; ++j) is_test[idx[j]] = true;
  }
  Dataset tr{d.spec, {}}, te{d.spec, {}};
  for (std::size_t i = 0; i < d.size(); ++i) (is_test[i] ? te : tr).samples.push_back(d.samples[i]);
  return {tr, te};
}

struct ShuffleEvalResult {
  double acc_normal = 0;
  double acc_shuffled = 0;
  double drop = 0;
};

/// Accuracy of a trained probe on clean test clips vs the same clips with a
/// random non-identity group shuffle. `identity` substitutes the identity
/// permutation (a control that must yield zero drop).
inline ShuffleEvalResult shuffle_eval(const ModelState<float>& s, const LinearProbe& probe, const Dataset& test,
                                      const Config& cfg, Rng rng, bool identity = false) {
  const int n_groups = cfg.clip_length / cfg.group_size;
  std::vector<GroupPermutation> perms;
  for (std::size_t i = 0; i < test.size(); ++i)
    perms.push_back(identity ? GroupPermutation::identity(n_groups, cfg.group_size)
                             : sample_negative_perms(n_groups, 1, rng, cfg.group_size).front());
  const auto clean = evaluate_probe(probe, extract_features(s, test, cfg));
  const auto shuffled = evaluate_probe(
      probe, extract_features(s, test, cfg, [&](const VideoTensor& c, std::size_t i) { return group_shuffle(c, perms[i]); }));
  return {clean.top1, shuffled.top1, clean.top1 - shuffled.top1};
}

struct RetrievalHit {
  std::size_t index = 0;
  double similarity = 0;
  friend bool operator==(const RetrievalHit&, const RetrievalHit&) = default;
};

/// Top-k gallery rows by cosine similarity to `query`; ties go to the lower index.
inline std::vector<RetrievalHit> rank_by_cosine(const std::vector<double>& query, const std::vector<std::vector<double>>& gallery,
                                                std::size_t k) {
  if (gallery.empty()) throw InputError("gallery must be non-empty");
  if (k > gallery.size()) throw InputError("k exceeds gallery size");
  auto norm = [](const std::vector<double>& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); };
  const double qn = norm(query);
  std::vector<RetrievalHit> hits;
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const double dot = std::inner_product(query.begin(), query.end(), gallery[i].begin(), 0.0);
    hits.push_back({i, dot / (qn * norm(gallery[i]))});
  }
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(),
                    [](const RetrievalHit& a, const RetrievalHit& b) {
                      return a.similarity > b.similarity || (a.similarity == b.similarity && a.index < b.index);
                    });
  hits.resize(k);
  return hits;
}

inline std::vector<double> visual_embedding(const ModelState<float>& s, const VideoTensor& clip) {
  const auto e = embed(s, clip, Head::Visual);
  return {e.begin(), e.end()};
}

/// Nearest neighbours of `query` among `gallery` clips in head_V space.
inline std::vector<RetrievalHit> retrieve_topk(const ModelState<float>& s, const VideoTensor& query,
                                               const std::vector<VideoTensor>& gallery, std::size_t k) {
  std::vector<std::vector<double>> g;
  for (const auto& c : gallery) g.push_back(visual_embedding(s, c));
  return rank_by_cosine(visual_embedding(s, query), g, k);
}

/// Centre clips of a dataset, for use as a retrieval gallery.
inline std::vector<VideoTensor> center_clips(const Dataset& d, const Config& cfg) {
  std::vector<VideoTensor> out;
  const auto policy = AugmentPolicy::identity(cfg.crop_size);
  Rng unused(0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& v = d.samples[i].video;
    out.push_back(apply_policy(extract_clip(v, center_clip(v, static_cast<int>(i), cfg)), policy, unused));
  }
  return out;
}

/// Per class keeps round(fraction * class size) rng-chosen samples; indices
/// returned in ascending order. Fraction 1 keeps everything.
inline std::vector<std::size_t> stratified_subset(const std::vector<int>& labels, double fraction, Rng rng) {
  if (!(fraction > 0 && fraction <= 1)) throw InputError("fractions must lie in (0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> out;
  for (auto& [label, idx] : by_class) {
    const auto k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    if (k < 1)
      throw InputError("fraction " + std::to_string(fraction) + " too small for stratification: class " +
                       std::to_string(label) + " would get no samples");
    rng.shuffle(idx.begin(), idx.end());
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct LowshotRow {
  double fraction = 0;
  int n_train = 0;
  double accuracy = 0;
};

inline std::vector<LowshotRow> lowshot_eval(const ModelState<float>& s, const Dataset& train, const Dataset& test,
                                            const std::vector<double>& fractions, const Config& cfg) {
  const auto ftr = extract_features(s, train, cfg);
  const auto fte = extract_features(s, test, cfg);
  std::vector<LowshotRow> rows;
  for (double f : fractions) {
    const auto idx = stratified_subset(ftr.y, f, Rng(cfg.seed).derive(0x10540ULL));
    const auto probe = train_probe(ftr.subset(idx), train.n_classes(), cfg, probe_rng(cfg));
    rows.push_back({f, static_cast<int>(idx.size()), evaluate_probe(probe, fte).top1});
  }
  return rows;
}

/// Relative change of `a` over `b` in percent, per fraction.
inline std::vector<double> relative_delta_percent(const std::vector<LowshotRow>& a, const std::vector<LowshotRow>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    d.push_back(b[i].accuracy > 0 ? 100.0 * (a[i].accuracy - b[i].accuracy) / b[i].accuracy : std::nan(""));
  return d;
}

struct MotionClassRow {
  std::string category;
  double motion = 0;
  double accuracy_a = 0;
  double accuracy_b = 0;
  double delta = 0;
};

/// Median over a class's videos of each video's median window amplitude.
inline std::vector<double> class_motion_scores(const Dataset& d, const Config& cfg) {
  std::map<int, std::vector<double>> per;
  for (const auto& s : d.samples) {
    const auto prof = profile(s.video, resolved_top_k(cfg, s.video.height, s.video.width), cfg.beta);
    per[s.label].push_back(median(prof.amplitudes));
  }
  std::vector<double> out(d.n_classes(), std::nan(""));
  for (auto& [k, v] : per) out[k] = median(v);
  return out;
}

/// Per-class accuracy difference (a - b) next to class motion, sorted by
/// descending delta.
inline std::vector<MotionClassRow> motion_class_report(const ModelState<float>& a, const ModelState<float>& b,
                                                       const Dataset& train, const Dataset& test, const Config& cfg) {
  const auto ra = linear_probe(a, train, test, cfg).result;
  const auto rb = linear_probe(b, train, test, cfg).result;
  const auto motion = class_motion_scores(test, cfg);
  std::vector<MotionClassRow> rows;
  for (int k = 0; k < test.n_classes(); ++k)
    rows.push_back({test.spec.classes[k], motion[k], ra.per_class[k], rb.per_class[k], ra.per_class[k] - rb.per_class[k]});
  std::stable_sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.delta > y.delta; });
  return rows;
}

/// Pretraining with the shuffled-vs-ordered cross-entropy pretext head in
/// place of the shuffled contrastive term.
inline TrainState pretext_baseline(Config cfg, const Dataset& dataset, long steps, const RunHooks& hooks = {}) {
  cfg.objective = Objective::Pretext;
  return pretrain(cfg, dataset, steps, hooks);
}

/// Full finetuning: backbone and a linear classifier trained jointly with
/// cross-entropy on centre clips. Returns held-out top-1.
inline double finetune(const ModelState<float>& init, const Dataset& train, const Dataset& test, const Config& cfg,
                       int epochs) {
  ModelState<float> s = init;
  const int d = s.config().repr_dim(), k = train.n_classes();
  const int cls_w = static_cast<int>(s.params().size());
  s.add("classifier.w", d, k, true);
  s.add("classifier.b", 1, k, false);
  auto m = zero_gradients(s), v = zero_gradients(s);
  const auto clips = center_clips(train, cfg);
  Rng rng = probe_rng(cfg);
  long t = 0;
  for (int e = 0; e < epochs; ++e)
    for (const auto& batch : iterate(train.size(), cfg.probe_batch, true, rng)) {
      ag::Tape<float> tp;
      auto P = bind(tp, s, true);
      std::vector<ag::Var> losses;
      for (auto i : batch) {
        auto f = forward(tp, P, clips[i]);
        auto z = tp.linear(f.repr, P.vars[cls_w], P.vars[cls_w + 1]);
        losses.push_back(tp.cross_entropy(z, train.samples[i].label));
      }
      auto loss = tp.scale(tp.sum(losses), 1.0f / static_cast<float>(batch.size()));
      tp.backward(loss);
      adamw_step(s, P.gradients(), m, v, ++t, cfg.probe_lr, cfg.weight_decay);
    }
  const auto test_clips = center_clips(test, cfg);
  int hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    ag::Tape<float> tp(false);
    auto P = bind(tp, s, false);
    const auto z = tp.value(tp.linear(forward(tp, P, test_clips[i]).repr, P.vars[cls_w], P.vars[cls_w + 1]));
    hits += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == test.samples[i].label;
  }
  return test.size() ? static_cast<double>(hits) / static_cast<double>(test.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// Report formatting
// ---------------------------------------------------------------------------

/// Header lines every report carries.
inline std::string report_header(const Config& cfg, const std::string& checkpoint) {
  return "# config_hash\t" + hex64(config_hash(cfg)) + "\n# checkpoint\t" + checkpoint + "\n";
}

inline std::string fmt_pct(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100 * x;
  return os.str();
}

inline std::string format_motion_table(const std::vector<MotionClassRow>& rows) {
  std::ostringstream os;
  os << "Category\tMotion\tDelta Acc.\n";
  for (const auto& r : rows) os << r.category << "\t" << std::setprecision(6) << r.motion << "\t" << fmt_pct(r.delta) << "\n";
  return os.str();
}

}  // namespace scvrl

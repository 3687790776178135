#pragma once

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scvrl/augment.hpp"
#include "scvrl/core.hpp"
#include "scvrl/model.hpp"
#include "scvrl/momentum.hpp"
#include "scvrl/motion.hpp"
#include "scvrl/objective.hpp"
#include "scvrl/synthdata.hpp"

namespace scvrl {

/// Linear warm-up from lr_warm to lr_peak over warmup_steps, then cosine
/// annealing down to lr_end at total_steps.
inline double lr_at(long step, const Config& c) {
  const long w = c.warmup_steps, s = c.total_steps;
  step = std::clamp(step, 0L, s);
  if (step < w) return c.lr_warm + (c.lr_peak - c.lr_warm) * static_cast<double>(step) / static_cast<double>(w);
  const double progress = static_cast<double>(step - w) / static_cast<double>(s - w);
  return c.lr_end + 0.5 * (c.lr_peak - c.lr_end) * (1 + std::cos(M_PI * progress));
}

/// First and second moment accumulators of the AdamW optimizer.
struct AdamState {
  Gradients<float> m;
  Gradients<float> v;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One AdamW step (decoupled weight decay, applied before the moment update).
/// `t` is the 1-based update count used for bias correction.
template <class T>
void adamw_step(ModelState<T>& s, const Gradients<T>& g, Gradients<T>& m, Gradients<T>& v, long t, double lr,
                double weight_decay) {
  const double bc1 = 1 - std::pow(kAdamBeta1, static_cast<double>(t));
  const double bc2 = 1 - std::pow(kAdamBeta2, static_cast<double>(t));
  const T b1 = static_cast<T>(kAdamBeta1), b2 = static_cast<T>(kAdamBeta2);
  const T step = static_cast<T>(lr / bc1), inv_sqrt_bc2 = static_cast<T>(1 / std::sqrt(bc2));
  const T eps = static_cast<T>(kAdamEps);
  for (std::size_t i = 0; i < s.params().size(); ++i) {
    auto& p = s.params()[i];
    const T decay = p.decay ? static_cast<T>(1 - lr * weight_decay) : T(1);
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      p.data[j] *= decay;
      m[i][j] = b1 * m[i][j] + (1 - b1) * g[i][j];
      v[i][j] = b2 * v[i][j] + (1 - b2) * g[i][j] * g[i][j];
      p.data[j] -= step * m[i][j] / (std::sqrt(v[i][j]) * inv_sqrt_bc2 + eps);
    }
  }
}

struct TrainState {
  long step = 0;
  Config cfg;
  ModelState<float> online;
  ModelState<float> momentum;
  MemoryBank bank;
  AdamState opt;
  Rng rng;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// Dataset plus per-video motion profiles (computed once; profiles are pure).
struct TrainingData {
  const Dataset* dataset = nullptr;
  std::vector<MotionProfile> profiles;
  std::vector<MotionProfile> uniform;

  TrainingData(const Dataset& d, const Config& cfg) : dataset(&d) {
    for (const auto& s : d.samples) {
      const int k = resolved_top_k(cfg, s.video.height, s.video.width);
      profiles.push_back(profile(s.video, k, cfg.beta));
      auto u = profiles.back();
      u.probabilities = window_probabilities(u.amplitudes, std::numeric_limits<double>::infinity());
      uniform.push_back(std::move(u));
    }
  }
};

struct StepMetrics {
  long step = 0;
  std::optional<double> loss_temporal;
  std::optional<double> loss_visual;
  std::optional<double> loss_pretext;
  double loss_total = 0;
  double lr = 0;
  LogitStats temporal_logits;
  LogitStats visual_logits;
  int online_backbone_passes = 0;
  int bank_count = 0;

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["step"] = step;
    if (loss_temporal) j["L_T"] = *loss_temporal;
    if (loss_visual) j["L_V"] = *loss_visual;
    if (loss_pretext) j["L_P"] = *loss_pretext;
    j["L_total"] = loss_total;
    j["lr"] = lr;
    if (loss_temporal) {
      j["pos_logit_T"] = temporal_logits.positive;
      j["neg_logit_T"] = temporal_logits.negative_mean;
    }
    if (loss_visual) {
      j["pos_logit_V"] = visual_logits.positive;
      j["neg_logit_V"] = visual_logits.negative_mean;
    }
    return j;
  }
};

inline bool uses_temporal(Objective o) { return o == Objective::SCVRL || o == Objective::ShuffledOnly; }
inline bool uses_visual(Objective o) { return o != Objective::ShuffledOnly; }

inline TrainState init_train_state(const Config& cfg) {
  const auto violations = validate_config(cfg);
  if (!violations.empty()) throw InputError("invalid config: " + violations.front());
  TrainState s;
  s.cfg = cfg;
  const Rng root(cfg.seed);
  Rng init = root.derive(1);
  s.online = init_model<float>(BackboneConfig::from(cfg), init);
  s.momentum = s.online;
  s.bank = MemoryBank(cfg.bank_size, cfg.head_out);
  s.opt.m = zero_gradients(s.online);
  s.opt.v = zero_gradients(s.online);
  s.rng = root.derive(2);
  return s;
}

/// Clip of cfg.clip_length frames starting in `window`, with start-frame
/// jitter of +-temporal_jitter clamped to the video.
inline ClipSpec clip_in_window(const VideoTensor& v, int video_id, int window, const Config& cfg, Rng& rng) {
  const int span = (cfg.clip_length - 1) * cfg.clip_stride + 1;
  if (span > v.frames)
    throw InputError("clip of " + std::to_string(span) + " frames does not fit video of " + std::to_string(v.frames));
  const long jitter = cfg.temporal_jitter > 0 ? rng.uniform_int(-static_cast<long>(cfg.temporal_jitter),
                                                                static_cast<long>(cfg.temporal_jitter))
                                              : 0;
  const long start = std::clamp(static_cast<long>(window) * window_frames(v) + jitter, 0L,
                                static_cast<long>(v.frames - span));
  return {video_id, static_cast<int>(start), cfg.clip_length, cfg.clip_stride};
}

/// Deterministic centre clip used for evaluation.
inline ClipSpec center_clip(const VideoTensor& v, int video_id, const Config& cfg) {
  const int span = (cfg.clip_length - 1) * cfg.clip_stride + 1;
  if (span > v.frames)
    throw InputError("clip of " + std::to_string(span) + " frames does not fit video of " + std::to_string(v.frames));
  return {video_id, (v.frames - span) / 2, cfg.clip_length, cfg.clip_stride};
}

/// Fills the bank with momentum-encoded visual keys until it holds
/// min(bank_warmup, bank_size) entries. No loss, no parameter change.
inline void warm_bank(TrainState& s, const TrainingData& data) {
  const auto& ds = *data.dataset;
  const auto policy = AugmentPolicy::from(s.cfg);
  const int target = std::min(s.cfg.bank_warmup, s.cfg.bank_size);
  std::size_t i = 0;
  while (s.bank.count() < target) {
    const auto idx = i++ % ds.size();
    Rng r = s.rng.fork();
    const auto& v = ds.samples[idx].video;
    const int w = sample_window(data.profiles[idx], r);
    const auto clip = apply_policy(extract_clip(v, clip_in_window(v, static_cast<int>(idx), w, s.cfg, r)), policy, r);
    s.bank.enqueue(embed(s.momentum, clip, Head::Visual));
  }
}

/// Indices of the batch consumed at `step`: epochs are seed-determined
/// shuffles of the dataset, walked in order, so any step's batch can be
/// recomputed without iterator state.
inline std::vector<std::size_t> batch_for_step(std::size_t n, int batch_size, long step, std::uint64_t seed) {
  std::vector<std::size_t> out;
  std::vector<std::size_t> order;
  long cached_epoch = -1;
  const Rng root(seed);
  for (int k = 0; k < batch_size; ++k) {
    const auto global = static_cast<std::size_t>(step) * batch_size + k;
    const auto epoch = static_cast<long>(global / n);
    if (epoch != cached_epoch) {
      Rng r = root.derive(0xE0C0000ULL + static_cast<std::uint64_t>(epoch));
      order = iterate(n, static_cast<int>(n), true, r).front();
      cached_epoch = epoch;
    }
    out.push_back(order[global % n]);
  }
  return out;
}

/// One optimisation step over `batch` (indices into the dataset).
inline StepMetrics train_step(TrainState& s, const TrainingData& data, const std::vector<std::size_t>& batch) {
  const auto& cfg = s.cfg;
  const auto& ds = *data.dataset;
  const auto policy = AugmentPolicy::from(cfg);
  const Objective obj = cfg.objective;
  if (uses_visual(obj) && s.bank.count() < std::min(cfg.bank_warmup, cfg.bank_size))
    throw InputError("bank must be warmed before visual loss");

  StepMetrics met;
  met.step = s.step;
  met.lr = lr_at(s.step, cfg);

  ag::Tape<float> tp;
  auto P = bind(tp, s.online, true);
  ag::Var bank;
  if (uses_visual(obj)) bank = bank_on_tape(tp, s.bank.negatives());

  std::vector<ag::Var> totals;
  std::vector<std::vector<float>> keys;
  double sum_t = 0, sum_v = 0, sum_p = 0;
  LogitStats lt_stats, lv_stats;
  const int n_groups = cfg.clip_length / cfg.group_size;

  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const auto idx = batch[bi];
    const auto& video = ds.samples[idx].video;
    Rng r = s.rng.fork();
    const int wa = sample_window(data.profiles[idx], r);
    const auto clip = extract_clip(video, clip_in_window(video, static_cast<int>(idx), wa, cfg, r));
    const auto anchor = apply_policy(clip, policy, r);
    auto f = forward(tp, P, anchor);
    ++met.online_backbone_passes;

    std::optional<ag::Var> lt, lv, lp;
    if (uses_temporal(obj)) {
      const auto positive = apply_policy(clip, policy, r);
      const auto perms = sample_negative_perms(n_groups, cfg.n_temporal_negatives, r, cfg.group_size);
      auto term = temporal_term(tp, P, f.repr, s.momentum, positive, perms, cfg.tau);
      lt = term.loss;
      sum_t += tp.scalar(term.loss);
      lt_stats.positive += term.logits.positive;
      lt_stats.negative_mean += term.logits.negative_mean;
    }
    if (uses_visual(obj)) {
      const auto& prof = cfg.positive_sampling == PositiveSampling::Targeted ? data.profiles[idx] : data.uniform[idx];
      const int wv = sample_window(prof, r);
      const auto vclip = extract_clip(video, clip_in_window(video, static_cast<int>(idx), wv, cfg, r));
      const auto key = embed(s.momentum, apply_policy(vclip, policy, r), Head::Visual);
      auto term = visual_term(tp, P, f.repr, key, bank, cfg.tau);
      lv = term.loss;
      sum_v += tp.scalar(term.loss);
      lv_stats.positive += term.logits.positive;
      lv_stats.negative_mean += term.logits.negative_mean;
      keys.push_back(key);
    }
    if (obj == Objective::Pretext) {
      // alternate ordered / shuffled targets across the batch: 50/50 by construction
      const bool shuffled = bi % 2 == 1;
      auto input = apply_policy(clip, policy, r);
      const auto perm = sample_negative_perms(n_groups, 1, r, cfg.group_size).front();
      if (shuffled) input = group_shuffle(input, perm);
      auto g = forward(tp, P, input);
      auto term = tp.bce_with_logits(pretext_logit(tp, P, g.repr), shuffled ? 1.0f : 0.0f);
      lp = term;
      sum_p += tp.scalar(term);
    }

    const auto lam = static_cast<float>(cfg.lambda_weight);
    ag::Var total;
    switch (obj) {
      case Objective::SCVRL:
        total = cfg.weighted_term == WeightedTerm::Visual ? tp.add(*lt, tp.scale(*lv, lam))
                                                          : tp.add(tp.scale(*lt, lam), *lv);
        break;
      case Objective::CVRL: total = *lv; break;
      case Objective::ShuffledOnly: total = *lt; break;
      case Objective::Pretext: total = tp.add(*lp, tp.scale(*lv, lam)); break;
    }
    totals.push_back(total);
  }

  const double nb = static_cast<double>(batch.size());
  auto loss = tp.scale(tp.sum(totals), static_cast<float>(1.0 / nb));
  met.loss_total = tp.scalar(loss);
  if (uses_temporal(obj)) {
    met.loss_temporal = sum_t / nb;
    met.temporal_logits = {lt_stats.positive / nb, lt_stats.negative_mean / nb};
  }
  if (uses_visual(obj)) {
    met.loss_visual = sum_v / nb;
    met.visual_logits = {lv_stats.positive / nb, lv_stats.negative_mean / nb};
  }
  if (obj == Objective::Pretext) met.loss_pretext = sum_p / nb;
  if (!std::isfinite(met.loss_total)) {
    std::string ids;
    for (auto i : batch) ids += (ids.empty() ? "" : ",") + std::to_string(ds.samples[i].id);
    throw NumericalError("non-finite loss at step " + std::to_string(s.step) + "; batch videos [" + ids +
                         "]; metrics " + met.to_json().dump());
  }

  tp.backward(loss);
  adamw_step(s.online, P.gradients(), s.opt.m, s.opt.v, s.step + 1, met.lr, cfg.weight_decay);
  ema_update(s.momentum, s.online, cfg.ema_momentum);
  for (const auto& k : keys) s.bank.enqueue(k);
  ++s.step;
  met.bank_count = s.bank.count();
  return met;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Little-endian byte layout:
//   magic "SCVRLCKP" | u32 version (1)
//   u64 len | config text
//   u64 step
//   u32 n_params, then per parameter:
//     u32 name_len | name | u32 rows | u32 cols | u8 dtype (1 = float32)
//     online f32[rows*cols] | momentum f32[..] | adam m f32[..] | adam v f32[..]
//   u32 bank capacity | u32 dim | u32 count | u32 cursor | f32[capacity*dim]
//   u64 len | rng state text
//   u32 CRC-32 (zlib polynomial) of every preceding byte

inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'V', 'R', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    le<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void f32(const std::vector<float>& v) {
    for (float x : v) le<std::uint32_t>(std::bit_cast<std::uint32_t>(x));
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* p, std::size_t n) : p_(p), n_(n) {}
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_ + off_, n);
    off_ += n;
  }
  template <class U>
  U le() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p_[off_ + i])) << (8 * i);
    off_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string str() {
    const auto n = le<std::uint64_t>();
    need(n);
    std::string s(p_ + off_, n);
    off_ += n;
    return s;
  }
  std::vector<float> f32(std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = std::bit_cast<float>(le<std::uint32_t>());
    return v;
  }

 private:
  void need(std::size_t n) const {
    if (off_ + n > n_) throw InputError("corrupt checkpoint: truncated");
  }
  const char* p_;
  std::size_t n_;
  std::size_t off_ = 0;
};

inline std::uint32_t crc(const char* p, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(p), static_cast<uInt>(n)));
}

}  // namespace ckpt

inline std::vector<char> serialize_checkpoint(const TrainState& s) {
  ckpt::Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.str(serialize_config(s.cfg));
  w.le<std::uint64_t>(static_cast<std::uint64_t>(s.step));
  const auto& ps = s.online.params();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ps[i].name.size()));
    w.bytes(ps[i].name.data(), ps[i].name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ps[i].rows));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ps[i].cols));
    w.le<std::uint8_t>(1);
    w.f32(ps[i].data);
    w.f32(s.momentum.params()[i].data);
    w.f32(s.opt.m[i]);
    w.f32(s.opt.v[i]);
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.bank.capacity()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.bank.dim()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.bank.count()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.bank.cursor()));
  w.f32(s.bank.raw());
  w.str(s.rng.state());
  auto& buf = w.buffer();
  w.le<std::uint32_t>(ckpt::crc(buf.data(), buf.size()));
  return std::move(buf);
}

inline TrainState deserialize_checkpoint(const std::vector<char>& buf) {
  if (buf.size() < sizeof kCheckpointMagic + 8) throw InputError("corrupt checkpoint: too short");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw InputError("corrupt checkpoint: bad magic");
  ckpt::Reader tail(buf.data() + buf.size() - 4, 4);
  if (tail.le<std::uint32_t>() != ckpt::crc(buf.data(), buf.size() - 4)) throw InputError("corrupt checkpoint: CRC mismatch");
  ckpt::Reader r(buf.data(), buf.size() - 4);
  char magic[8];
  r.bytes(magic, 8);
  if (const auto v = r.le<std::uint32_t>(); v != kCheckpointVersion)
    throw InputError("unsupported checkpoint version " + std::to_string(v));
  TrainState s = init_train_state(parse_config(r.str()));
  s.step = static_cast<long>(r.le<std::uint64_t>());
  const auto n = r.le<std::uint32_t>();
  if (n != s.online.params().size()) throw InputError("corrupt checkpoint: parameter count does not match config");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name(r.le<std::uint32_t>(), '\0');
    r.bytes(name.data(), name.size());
    auto& p = s.online.params()[i];
    const auto rows = r.le<std::uint32_t>(), cols = r.le<std::uint32_t>();
    const auto dtype = r.le<std::uint8_t>();
    if (name != p.name || static_cast<int>(rows) != p.rows || static_cast<int>(cols) != p.cols || dtype != 1)
      throw InputError("corrupt checkpoint: tensor " + name + " does not match config");
    const std::size_t sz = static_cast<std::size_t>(rows) * cols;
    p.data = r.f32(sz);
    s.momentum.params()[i].data = r.f32(sz);
    s.opt.m[i] = r.f32(sz);
    s.opt.v[i] = r.f32(sz);
  }
  const auto cap = r.le<std::uint32_t>(), dim = r.le<std::uint32_t>();
  const auto count = r.le<std::uint32_t>(), cursor = r.le<std::uint32_t>();
  if (static_cast<int>(cap) != s.bank.capacity() || static_cast<int>(dim) != s.bank.dim())
    throw InputError("corrupt checkpoint: bank shape does not match config");
  s.bank.restore(static_cast<int>(count), static_cast<int>(cursor), r.f32(static_cast<std::size_t>(cap) * dim));
  s.rng.set_state(r.str());
  return s;
}

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  const auto buf = serialize_checkpoint(s);
  std::ofstream os(path, std::ios::binary);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw InputError("failed writing checkpoint " + path.string());
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf);
}

/// Stable identifier of a checkpoint: hex CRC-32 of its serialized bytes,
/// excluding the trailing CRC (which would make the result constant).
inline std::string checkpoint_id(const TrainState& s) {
  const auto buf = serialize_checkpoint(s);
  char out[9];
  std::snprintf(out, sizeof out, "%08x", ckpt::crc(buf.data(), buf.size() - 4));
  return out;
}

// ---------------------------------------------------------------------------
// Loops
// ---------------------------------------------------------------------------

struct RunHooks {
  std::function<void(const StepMetrics&)> on_metrics;
  std::function<void(const TrainState&)> on_checkpoint;  // every cfg.checkpoint_every steps
};

/// Runs `steps` optimisation steps from the current state.
inline void run_steps(TrainState& s, const TrainingData& data, long steps, const RunHooks& hooks = {}) {
  if (steps > 0 && uses_visual(s.cfg.objective)) warm_bank(s, data);
  for (long i = 0; i < steps; ++i) {
    const auto batch = batch_for_step(data.dataset->size(), s.cfg.batch_size, s.step, s.cfg.seed);
    const auto met = train_step(s, data, batch);
    if (hooks.on_metrics) hooks.on_metrics(met);
    if (hooks.on_checkpoint && s.cfg.checkpoint_every > 0 && s.step % s.cfg.checkpoint_every == 0)
      hooks.on_checkpoint(s);
  }
}

/// Fresh initialisation, bank warm-up, then `steps` steps.
inline TrainState pretrain(const Config& cfg, const Dataset& dataset, long steps, const RunHooks& hooks = {}) {
  TrainState s = init_train_state(cfg);
  const TrainingData data(dataset, cfg);
  run_steps(s, data, steps, hooks);
  return s;
}

}  // namespace scvrl

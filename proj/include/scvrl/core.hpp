#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scvrl {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Bad input, bad config, bad file. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or activation. The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/// Seeded pseudo-random stream. All conversions from raw engine output are
/// done here rather than through <random> distributions, whose output is
/// implementation-defined, so streams are bit-exact across standard libraries.
///
/// An Rng is not thread-safe; give each consumer its own fork().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be >= 1");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  /// Uniform integer in [lo, hi] inclusive.
  long uniform_int(long lo, long hi) {
    return lo + static_cast<long>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one of the pair is discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Truncated normal on [-2σ, 2σ] by rejection.
  double truncated_normal(double sigma) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= 2.0) return z * sigma;
    }
  }

  /// Independent child stream. Advances this stream by one draw.
  Rng fork() { return Rng(engine_(), Tag{}); }

  /// Deterministic child keyed by `key`, without advancing this stream.
  [[nodiscard]] Rng derive(std::uint64_t key) const {
    Rng copy = *this;
    return Rng(copy.engine_() ^ mix(key + 0x9e3779b97f4a7c15ULL), Tag{});
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = uniform_int(i);
      std::iter_swap(first + (i - 1), first + j);
    }
  }

  [[nodiscard]] std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw InputError("corrupt rng state");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  struct Tag {};
  Rng(std::uint64_t raw, Tag) : engine_(mix(raw)) {}

  // splitmix64 finalizer; decorrelates nearby seeds.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// VideoTensor / ClipSpec
// ---------------------------------------------------------------------------

/// A clip or video: frames laid out row-major as [T][H][W][Ch], values in [0,1].
struct VideoTensor {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  double fps = 8.0;
  std::vector<float> data;

  VideoTensor() = default;
  VideoTensor(int t, int h, int w, int ch, double fps_ = 8.0)
      : frames(t), height(h), width(w), channels(ch), fps(fps_),
        data(static_cast<std::size_t>(t) * h * w * ch, 0.0f) {}

  [[nodiscard]] std::size_t frame_size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  [[nodiscard]] std::size_t index(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c;
  }
  float& at(int t, int y, int x, int c) { return data[index(t, y, x, c)]; }
  [[nodiscard]] float at(int t, int y, int x, int c) const { return data[index(t, y, x, c)]; }

  float* frame(int t) { return data.data() + t * frame_size(); }
  [[nodiscard]] const float* frame(int t) const { return data.data() + t * frame_size(); }

  [[nodiscard]] std::string shape_string() const {
    std::ostringstream os;
    os << frames << "x" << height << "x" << width << "x" << channels;
    return os.str();
  }

  /// Throws InputError if any invariant is broken.
  void validate() const {
    if (frames < 1 || height < 1 || width < 1)
      throw InputError("video must have T, H, W >= 1, got " + shape_string());
    if (channels != 1 && channels != 3)
      throw InputError("video channel count must be 1 or 3, got " + std::to_string(channels));
    if (!(fps > 0.0)) throw InputError("video fps must be positive");
    if (data.size() != static_cast<std::size_t>(frames) * frame_size())
      throw InputError("video buffer size does not match shape " + shape_string());
    for (float v : data)
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
        throw InputError("video values must be finite and in [0,1]");
  }

  friend bool operator==(const VideoTensor&, const VideoTensor&) = default;
};

struct ClipSpec {
  int video_id = 0;
  int start_frame = 0;
  int length = 16;
  int stride = 4;

  [[nodiscard]] bool valid_for(int video_frames) const {
    return start_frame >= 0 && length >= 1 && stride >= 1 &&
           start_frame + (length - 1) * stride < video_frames;
  }
};

/// Extracts the frames named by `spec` from `video`.
inline VideoTensor extract_clip(const VideoTensor& video, const ClipSpec& spec) {
  if (!spec.valid_for(video.frames))
    throw InputError("clip [start " + std::to_string(spec.start_frame) + ", length " +
                     std::to_string(spec.length) + ", stride " + std::to_string(spec.stride) +
                     "] exceeds video of " + std::to_string(video.frames) + " frames");
  VideoTensor clip(spec.length, video.height, video.width, video.channels, video.fps / spec.stride);
  const auto fs = video.frame_size();
  for (int t = 0; t < spec.length; ++t)
    std::copy_n(video.frame(spec.start_frame + t * spec.stride), fs, clip.frame(t));
  return clip;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

enum class PoolingMode { CLS, AVG };
enum class HeadsMode { Separate, Shared };
enum class Objective { SCVRL, CVRL, ShuffledOnly, Pretext };
enum class WeightedTerm { Visual, Temporal };
enum class PositiveSampling { Targeted, Uniform };

inline std::string to_string(PoolingMode m) { return m == PoolingMode::CLS ? "cls" : "avg"; }
inline std::string to_string(HeadsMode m) { return m == HeadsMode::Separate ? "separate" : "shared"; }
inline std::string to_string(WeightedTerm m) { return m == WeightedTerm::Visual ? "visual" : "temporal"; }
inline std::string to_string(PositiveSampling m) {
  return m == PositiveSampling::Targeted ? "targeted" : "uniform";
}
inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::SCVRL: return "scvrl";
    case Objective::CVRL: return "cvrl";
    case Objective::ShuffledOnly: return "shuffled-only";
    case Objective::Pretext: return "pretext";
  }
  return "?";
}

inline PoolingMode parse_pooling(std::string_view s) {
  if (s == "cls" || s == "CLS") return PoolingMode::CLS;
  if (s == "avg" || s == "AVG") return PoolingMode::AVG;
  throw InputError("pooling_mode must be cls or avg, got '" + std::string(s) + "'");
}
inline HeadsMode parse_heads(std::string_view s) {
  if (s == "separate") return HeadsMode::Separate;
  if (s == "shared") return HeadsMode::Shared;
  throw InputError("heads_mode must be separate or shared, got '" + std::string(s) + "'");
}
inline Objective parse_objective(std::string_view s) {
  if (s == "scvrl") return Objective::SCVRL;
  if (s == "cvrl") return Objective::CVRL;
  if (s == "shuffled-only") return Objective::ShuffledOnly;
  if (s == "pretext") return Objective::Pretext;
  throw InputError("objective must be scvrl|cvrl|shuffled-only|pretext, got '" + std::string(s) + "'");
}
inline WeightedTerm parse_weighted_term(std::string_view s) {
  if (s == "visual") return WeightedTerm::Visual;
  if (s == "temporal") return WeightedTerm::Temporal;
  throw InputError("weighted_term must be visual or temporal, got '" + std::string(s) + "'");
}
inline PositiveSampling parse_positive_sampling(std::string_view s) {
  if (s == "targeted") return PositiveSampling::Targeted;
  if (s == "uniform") return PositiveSampling::Uniform;
  throw InputError("positive_sampling must be targeted or uniform, got '" + std::string(s) + "'");
}

/// Every experiment knob. Defaults are the desk-scale configuration; the
/// comments give the full-scale value where it differs.
struct Config {
  // objective
  double tau = 0.1;
  double lambda_weight = 1.0;
  Objective objective = Objective::SCVRL;
  WeightedTerm weighted_term = WeightedTerm::Visual;
  int n_temporal_negatives = 6;  // full scale: 12
  int bank_size = 1024;          // full scale: 65536
  int bank_warmup = 64;
  double ema_momentum = 0.999;

  // sampling
  double beta = 5.0;  // +inf means uniform window sampling
  int top_k = 0;      // 0: scale 4000 by resolution
  PositiveSampling positive_sampling = PositiveSampling::Targeted;
  int clip_length = 8;  // full scale: 16
  int clip_stride = 1;  // full scale: 4
  int group_size = 2;

  // augmentation
  int crop_size = 32;  // full scale: 224
  double crop_scale_min = 0.5;
  double crop_scale_max = 1.0;
  int temporal_jitter = 1;
  double p_gray = 0.2;
  double p_flip = 0.5;
  double p_blur = 0.5;
  double p_color = 0.8;
  double color_jitter = 0.4;

  // backbone
  int temporal_kernel = 2;
  int patch_size = 4;
  std::vector<int> stage_channels{16, 32, 64, 128};  // full scale: 96,192,384,768
  std::vector<int> stage_blocks{1, 1, 2, 1};         // full scale: 1,2,11,2
  std::vector<int> stage_heads{1, 2, 4, 8};
  int mlp_ratio = 4;
  PoolingMode pooling_mode = PoolingMode::CLS;
  HeadsMode heads_mode = HeadsMode::Separate;
  int head_hidden = 64;  // full scale: 2048
  int head_out = 16;     // full scale: 128

  // optimisation
  double lr_peak = 1e-4;
  double lr_warm = 1e-6;
  double lr_end = 1e-6;
  double weight_decay = 0.05;
  int warmup_steps = 100;
  int total_steps = 2000;
  int batch_size = 8;
  int checkpoint_every = 0;  // 0: only the final checkpoint

  // evaluation
  int probe_epochs = 100;
  double probe_lr = 1e-3;
  int probe_batch = 32;

  std::uint64_t seed = 0;

  friend bool operator==(const Config&, const Config&) = default;
};

/// top_k pixels per frame for the motion profile: 4000 at 224x224,
/// scaled with the frame area.
inline int resolved_top_k(const Config& cfg, int height, int width) {
  if (cfg.top_k > 0) return cfg.top_k;
  const double scaled = 4000.0 * height * width / (224.0 * 224.0);
  return std::max(1, static_cast<int>(std::lround(scaled)));
}

inline std::vector<std::string> validate_config(const Config& c) {
  std::vector<std::string> v;
  auto need = [&](bool ok, const char* msg) {
    if (!ok) v.emplace_back(msg);
  };
  need(c.tau > 0 && std::isfinite(c.tau), "tau must be > 0");
  need(std::isfinite(c.lambda_weight) && c.lambda_weight >= 0, "lambda_weight must be finite and >= 0");
  need(c.beta > 0 && !std::isnan(c.beta), "beta must be > 0 or inf");
  need(c.ema_momentum >= 0 && c.ema_momentum <= 1, "ema_momentum must be in [0,1]");
  need(c.group_size >= 1, "group_size must be >= 1");
  if (c.group_size >= 1 && c.clip_length % c.group_size != 0)
    v.push_back("group_size " + std::to_string(c.group_size) + " must divide clip_length " +
                std::to_string(c.clip_length));
  need(c.temporal_kernel == 2 || c.temporal_kernel == 3, "temporal_kernel must be 2 or 3");
  need(c.bank_size >= 1, "bank_size must be >= 1");
  need(c.bank_warmup >= 1, "bank_warmup must be >= 1");
  need(c.n_temporal_negatives >= 1, "n_temporal_negatives must be >= 1");
  need(c.clip_length >= 2 && c.clip_length % 2 == 0, "clip_length must be even and >= 2");
  need(c.clip_stride >= 1, "clip_stride must be >= 1");
  need(c.top_k >= 0, "top_k must be >= 0 (0 = auto)");
  need(c.crop_size >= 1, "crop_size must be >= 1");
  need(c.crop_scale_min > 0 && c.crop_scale_min <= c.crop_scale_max && c.crop_scale_max <= 1,
       "crop scale range must satisfy 0 < min <= max <= 1");
  need(c.temporal_jitter >= 0, "temporal_jitter must be >= 0");
  for (double p : {c.p_gray, c.p_flip, c.p_blur, c.p_color})
    if (!(p >= 0 && p <= 1)) {
      v.emplace_back("augmentation probabilities must be in [0,1]");
      break;
    }
  need(c.color_jitter >= 0 && c.color_jitter < 1, "color_jitter must be in [0,1)");
  need(c.patch_size >= 1, "patch_size must be >= 1");
  need(!c.stage_channels.empty(), "stage_channels must be non-empty");
  need(c.stage_channels.size() == c.stage_blocks.size() && c.stage_channels.size() == c.stage_heads.size(),
       "stage_channels, stage_blocks and stage_heads must have equal length");
  for (std::size_t i = 1; i < c.stage_channels.size(); ++i)
    if (c.stage_channels[i] != 2 * c.stage_channels[i - 1]) {
      v.emplace_back("stage_channels must double at every stage");
      break;
    }
  for (std::size_t i = 0; i < std::min(c.stage_channels.size(), c.stage_heads.size()); ++i)
    if (c.stage_heads[i] < 1 || c.stage_channels[i] % c.stage_heads[i] != 0) {
      v.emplace_back("stage_heads must divide stage_channels");
      break;
    }
  for (int b : c.stage_blocks)
    if (b < 1) {
      v.emplace_back("stage_blocks entries must be >= 1");
      break;
    }
  need(c.mlp_ratio >= 1, "mlp_ratio must be >= 1");
  need(c.head_hidden >= 1 && c.head_out >= 1, "head sizes must be >= 1");
  need(c.lr_peak > 0 && c.lr_warm >= 0 && c.lr_end >= 0, "learning rates must be positive");
  need(c.weight_decay >= 0, "weight_decay must be >= 0");
  need(c.warmup_steps >= 0 && c.total_steps >= 1 && c.warmup_steps < c.total_steps,
       "need 0 <= warmup_steps < total_steps");
  need(c.batch_size >= 1, "batch_size must be >= 1");
  need(c.checkpoint_every >= 0, "checkpoint_every must be >= 0");
  need(c.probe_epochs >= 1 && c.probe_lr > 0 && c.probe_batch >= 1, "probe settings must be positive");
  return v;
}

namespace detail {

inline std::string fmt_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline std::string fmt_ints(const std::vector<int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(xs[i]);
  }
  return s;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& s) {
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

inline long long parse_int(const std::string& s) {
  std::size_t pos = 0;
  const long long v = std::stoll(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(trim(item))));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

/// Splits `key = value` lines. Blank lines and '#' comments are skipped.
/// Calls fn(line_no, key, value); rethrows anything fn throws as a
/// line-numbered InputError.
template <class Fn>
void for_each_kv(std::string_view text, Fn&& fn) {
  std::istringstream is{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw InputError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    try {
      fn(key, value);
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception&) {
      throw InputError("line " + std::to_string(line_no) + ": bad value '" + value + "' for key '" +
                       key + "'");
    }
  }
}

}  // namespace detail

/// Flat `key = value` text, one key per line, in a fixed order.
inline std::string serialize_config(const Config& c) {
  using detail::fmt_double;
  using detail::fmt_ints;
  std::ostringstream os;
  os << "tau = " << fmt_double(c.tau) << "\n"
     << "lambda_weight = " << fmt_double(c.lambda_weight) << "\n"
     << "objective = " << to_string(c.objective) << "\n"
     << "weighted_term = " << to_string(c.weighted_term) << "\n"
     << "n_temporal_negatives = " << c.n_temporal_negatives << "\n"
     << "bank_size = " << c.bank_size << "\n"
     << "bank_warmup = " << c.bank_warmup << "\n"
     << "ema_momentum = " << fmt_double(c.ema_momentum) << "\n"
     << "beta = " << fmt_double(c.beta) << "\n"
     << "top_k = " << c.top_k << "\n"
     << "positive_sampling = " << to_string(c.positive_sampling) << "\n"
     << "clip_length = " << c.clip_length << "\n"
     << "clip_stride = " << c.clip_stride << "\n"
     << "group_size = " << c.group_size << "\n"
     << "crop_size = " << c.crop_size << "\n"
     << "crop_scale_min = " << fmt_double(c.crop_scale_min) << "\n"
     << "crop_scale_max = " << fmt_double(c.crop_scale_max) << "\n"
     << "temporal_jitter = " << c.temporal_jitter << "\n"
     << "p_gray = " << fmt_double(c.p_gray) << "\n"
     << "p_flip = " << fmt_double(c.p_flip) << "\n"
     << "p_blur = " << fmt_double(c.p_blur) << "\n"
     << "p_color = " << fmt_double(c.p_color) << "\n"
     << "color_jitter = " << fmt_double(c.color_jitter) << "\n"
     << "temporal_kernel = " << c.temporal_kernel << "\n"
     << "patch_size = " << c.patch_size << "\n"
     << "stage_channels = " << fmt_ints(c.stage_channels) << "\n"
     << "stage_blocks = " << fmt_ints(c.stage_blocks) << "\n"
     << "stage_heads = " << fmt_ints(c.stage_heads) << "\n"
     << "mlp_ratio = " << c.mlp_ratio << "\n"
     << "pooling_mode = " << to_string(c.pooling_mode) << "\n"
     << "heads_mode = " << to_string(c.heads_mode) << "\n"
     << "head_hidden = " << c.head_hidden << "\n"
     << "head_out = " << c.head_out << "\n"
     << "lr_peak = " << fmt_double(c.lr_peak) << "\n"
     << "lr_warm = " << fmt_double(c.lr_warm) << "\n"
     << "lr_end = " << fmt_double(c.lr_end) << "\n"
     << "weight_decay = " << fmt_double(c.weight_decay) << "\n"
     << "warmup_steps = " << c.warmup_steps << "\n"
     << "total_steps = " << c.total_steps << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "checkpoint_every = " << c.checkpoint_every << "\n"
     << "probe_epochs = " << c.probe_epochs << "\n"
     << "probe_lr = " << fmt_double(c.probe_lr) << "\n"
     << "probe_batch = " << c.probe_batch << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

/// Parses config text on top of the defaults. Unknown keys are an error.
inline Config parse_config(std::string_view text) {
  using namespace detail;
  Config c;
  for_each_kv(text, [&](const std::string& k, const std::string& v) {
    auto i = [&] { return static_cast<int>(parse_int(v)); };
    if (k == "tau") c.tau = parse_double(v);
    else if (k == "lambda_weight") c.lambda_weight = parse_double(v);
    else if (k == "objective") c.objective = parse_objective(v);
    else if (k == "weighted_term") c.weighted_term = parse_weighted_term(v);
    else if (k == "n_temporal_negatives") c.n_temporal_negatives = i();
    else if (k == "bank_size") c.bank_size = i();
    else if (k == "bank_warmup") c.bank_warmup = i();
    else if (k == "ema_momentum") c.ema_momentum = parse_double(v);
    else if (k == "beta") c.beta = parse_double(v);
    else if (k == "top_k") c.top_k = i();
    else if (k == "positive_sampling") c.positive_sampling = parse_positive_sampling(v);
    else if (k == "clip_length") c.clip_length = i();
    else if (k == "clip_stride") c.clip_stride = i();
    else if (k == "group_size") c.group_size = i();
    else if (k == "crop_size") c.crop_size = i();
    else if (k == "crop_scale_min") c.crop_scale_min = parse_double(v);
    else if (k == "crop_scale_max") c.crop_scale_max = parse_double(v);
    else if (k == "temporal_jitter") c.temporal_jitter = i();
    else if (k == "p_gray") c.p_gray = parse_double(v);
    else if (k == "p_flip") c.p_flip = parse_double(v);
    else if (k == "p_blur") c.p_blur = parse_double(v);
    else if (k == "p_color") c.p_color = parse_double(v);
    else if (k == "color_jitter") c.color_jitter = parse_double(v);
    else if (k == "temporal_kernel") c.temporal_kernel = i();
    else if (k == "patch_size") c.patch_size = i();
    else if (k == "stage_channels") c.stage_channels = parse_ints(v);
    else if (k == "stage_blocks") c.stage_blocks = parse_ints(v);
    else if (k == "stage_heads") c.stage_heads = parse_ints(v);
    else if (k == "mlp_ratio") c.mlp_ratio = i();
    else if (k == "pooling_mode") c.pooling_mode = parse_pooling(v);
    else if (k == "heads_mode") c.heads_mode = parse_heads(v);
    else if (k == "head_hidden") c.head_hidden = i();
    else if (k == "head_out") c.head_out = i();
    else if (k == "lr_peak") c.lr_peak = parse_double(v);
    else if (k == "lr_warm") c.lr_warm = parse_double(v);
    else if (k == "lr_end") c.lr_end = parse_double(v);
    else if (k == "weight_decay") c.weight_decay = parse_double(v);
    else if (k == "warmup_steps") c.warmup_steps = i();
    else if (k == "total_steps") c.total_steps = i();
    else if (k == "batch_size") c.batch_size = i();
    else if (k == "checkpoint_every") c.checkpoint_every = i();
    else if (k == "probe_epochs") c.probe_epochs = i();
    else if (k == "probe_lr") c.probe_lr = parse_double(v);
    else if (k == "probe_batch") c.probe_batch = i();
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(v));
    else throw InputError("unknown config key '" + k + "'");
  });
  return c;
}

/// FNV-1a 64 over the serialized config; stable across platforms.
inline std::uint64_t config_hash(const Config& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << x;
  return os.str();
}

}  // namespace scvrl

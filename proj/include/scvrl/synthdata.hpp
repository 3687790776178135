#pragma once

// Procedural moving-sprite videos.
//
// MOTION datasets label a video by the direction its sprite travels. The
// sprite starts at a uniform position on a torus and wraps at the frame
// borders, so its position in any single frame is uniform whatever the
// class: only the ordering of frames carries the label. Appearance nuisances
// (shape, colours, background texture, size) are drawn independently of the
// label.
//
// APPEARANCE datasets label by sprite shape and randomise the direction, the
// complementary situation.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scvrl/core.hpp"

namespace scvrl {

enum class DatasetKind { Motion, Appearance };

inline std::string to_string(DatasetKind k) { return k == DatasetKind::Motion ? "motion" : "appearance"; }

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Motion;
  int n_videos = 64;
  int video_length_frames = 24;
  int resolution = 32;
  int channels = 3;
  double fps = 8;
  std::vector<std::string> classes{"up", "down", "left", "right"};
  double speed_min = 1.0;  // pixels per frame
  double speed_max = 2.5;
  double static_window_prob = 0.25;
  double sprite_radius_min = 4.0;
  double sprite_radius_max = 6.0;
  double texture_amplitude = 0.08;
  std::uint64_t seed = 0;

  [[nodiscard]] int n_classes() const { return static_cast<int>(classes.size()); }
  [[nodiscard]] int window_frames() const { return std::max(1, static_cast<int>(std::lround(fps))); }
  [[nodiscard]] int n_windows() const { return video_length_frames / window_frames(); }

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct SyntheticSample {
  int id = 0;
  VideoTensor video;
  int label = 0;
  std::vector<double> motion_ground_truth;  // generator speed per 1-second window

  friend bool operator==(const SyntheticSample&, const SyntheticSample&) = default;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<SyntheticSample> samples;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] int n_classes() const { return spec.n_classes(); }
  [[nodiscard]] std::vector<int> labels() const {
    std::vector<int> l;
    for (const auto& s : samples) l.push_back(s.label);
    return l;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

namespace synth {

inline const std::map<std::string, std::pair<double, double>>& directions() {
  static const std::map<std::string, std::pair<double, double>> d{
      {"up", {0, -1}},
      {"down", {0, 1}},
      {"left", {-1, 0}},
      {"right", {1, 0}},
      {"up-left", {-M_SQRT1_2, -M_SQRT1_2}},
      {"up-right", {M_SQRT1_2, -M_SQRT1_2}},
      {"down-left", {-M_SQRT1_2, M_SQRT1_2}},
      {"down-right", {M_SQRT1_2, M_SQRT1_2}},
      {"static", {0, 0}},
  };
  return d;
}

inline const std::vector<std::string>& shapes() {
  static const std::vector<std::string> s{"disc", "square", "triangle", "ring"};
  return s;
}

/// Signed inside test for a shape of radius r centred at the origin.
inline bool inside(const std::string& shape, double dx, double dy, double r) {
  if (shape == "disc") return dx * dx + dy * dy <= r * r;
  if (shape == "square") return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
  if (shape == "ring") {
    const double d2 = dx * dx + dy * dy;
    return d2 <= r * r && d2 >= 0.3 * r * r;
  }
  // upward triangle inscribed in the circle of radius r
  const double top = -r, base = 0.5 * r;
  if (dy < top || dy > base) return false;
  const double half = (dy - top) / (base - top) * (r * 0.866);
  return std::abs(dx) <= half;
}

/// Wraps d into [-n/2, n/2).
inline double wrap(double d, double n) {
  d = std::fmod(d + 0.5 * n, n);
  if (d < 0) d += n;
  return d - 0.5 * n;
}

}  // namespace synth

/// Smallest frame that fits the largest sprite with a one-pixel margin.
inline int min_resolution(const DatasetSpec& s) { return static_cast<int>(std::ceil(2 * s.sprite_radius_max)) + 2; }

inline void validate_dataset_spec(const DatasetSpec& s) {
  if (s.n_classes() < 2) throw InputError("dataset needs at least 2 classes");
  if (s.n_videos < 1) throw InputError("n_videos must be >= 1");
  if (s.channels != 1 && s.channels != 3) throw InputError("channels must be 1 or 3");
  if (!(s.fps > 0)) throw InputError("fps must be positive");
  if (s.video_length_frames < s.window_frames() || s.video_length_frames < 2)
    throw InputError("video_length_frames must cover at least one " + std::to_string(s.window_frames()) +
                     "-frame window");
  if (s.resolution < min_resolution(s))
    throw InputError("resolution " + std::to_string(s.resolution) + " too small to render sprite; need at least " +
                     std::to_string(min_resolution(s)));
  if (s.speed_min < 0 || s.speed_max < s.speed_min) throw InputError("need 0 <= speed_min <= speed_max");
  if (s.static_window_prob < 0 || s.static_window_prob > 1) throw InputError("static_window_prob must be in [0,1]");
  if (s.sprite_radius_min <= 0 || s.sprite_radius_max < s.sprite_radius_min)
    throw InputError("need 0 < sprite_radius_min <= sprite_radius_max");
  const auto& known = s.kind == DatasetKind::Motion ? std::vector<std::string>{} : synth::shapes();
  for (const auto& c : s.classes) {
    if (s.kind == DatasetKind::Motion && !synth::directions().count(c))
      throw InputError("unknown motion class '" + c + "'");
    if (s.kind == DatasetKind::Appearance && std::find(known.begin(), known.end(), c) == known.end())
      throw InputError("unknown appearance class '" + c + "'");
  }
  auto sorted = s.classes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw InputError("duplicate class name");
}

/// Renders one video. All randomness comes from `rng`, which the caller
/// derives per video so that generation order does not matter.
inline SyntheticSample generate_one(const DatasetSpec& spec, int id, int label, Rng rng) {
  const int T = spec.video_length_frames, R = spec.resolution, C = spec.channels;
  const int wf = spec.window_frames();
  const int n_windows = spec.n_windows();
  SyntheticSample out;
  out.id = id;
  out.label = label;
  out.video = VideoTensor(T, R, R, C, spec.fps);

  const auto& cls = spec.classes[label];
  std::string shape;
  double dir_x = 0, dir_y = 0;
  if (spec.kind == DatasetKind::Motion) {
    shape = synth::shapes()[rng.uniform_int(synth::shapes().size())];
    std::tie(dir_x, dir_y) = synth::directions().at(cls);
  } else {
    shape = cls;
    const double a = rng.uniform(0, 2 * M_PI);
    dir_x = std::cos(a);
    dir_y = std::sin(a);
  }
  const bool moving_class = !(dir_x == 0 && dir_y == 0);

  // per-window speed schedule; the centre window always moves
  std::vector<double> speed(n_windows + 1, 0.0);
  for (int w = 0; w <= n_windows; ++w) {
    const bool is_static = rng.bernoulli(spec.static_window_prob);
    const double v = rng.uniform(spec.speed_min, spec.speed_max);
    speed[w] = (moving_class && (!is_static || w == n_windows / 2)) ? v : 0.0;
  }
  out.motion_ground_truth.assign(speed.begin(), speed.begin() + n_windows);

  // appearance nuisances
  double bg[3], fg[3];
  for (double& c : bg) c = rng.uniform(0.2, 0.8);
  const auto lum = [&](const double* c) { return C == 3 ? 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2] : c[0]; };
  do {
    for (double& c : fg) c = rng.uniform(0.0, 1.0);
  } while (std::abs(lum(fg) - lum(bg)) < 0.3);
  const double radius = rng.uniform(spec.sprite_radius_min, spec.sprite_radius_max);
  struct Wave {
    double fx, fy, phase, amp[3];
  };
  Wave waves[3];
  for (auto& w : waves) {
    w.fx = rng.uniform(-3, 3) * 2 * M_PI / R;
    w.fy = rng.uniform(-3, 3) * 2 * M_PI / R;
    w.phase = rng.uniform(0, 2 * M_PI);
    for (double& a : w.amp) a = spec.texture_amplitude * rng.uniform(-1, 1);
  }
  std::vector<double> background(static_cast<std::size_t>(R) * R * C);
  for (int y = 0; y < R; ++y)
    for (int x = 0; x < R; ++x)
      for (int c = 0; c < C; ++c) {
        double v = bg[c];
        for (const auto& w : waves) v += w.amp[c] * std::sin(w.fx * x + w.fy * y + w.phase);
        background[(static_cast<std::size_t>(y) * R + x) * C + c] = v;
      }

  double px = rng.uniform(0, R), py = rng.uniform(0, R);
  constexpr int kSuper = 4;
  for (int t = 0; t < T; ++t) {
    float* frame = out.video.frame(t);
    for (int y = 0; y < R; ++y)
      for (int x = 0; x < R; ++x) {
        const double dx0 = synth::wrap(x + 0.5 - px, R), dy0 = synth::wrap(y + 0.5 - py, R);
        double cover = 0;
        if (std::abs(dx0) <= radius + 1 && std::abs(dy0) <= radius + 1) {
          int hits = 0;
          for (int sy = 0; sy < kSuper; ++sy)
            for (int sx = 0; sx < kSuper; ++sx)
              hits += synth::inside(shape, dx0 + (sx + 0.5) / kSuper - 0.5, dy0 + (sy + 0.5) / kSuper - 0.5, radius);
          cover = static_cast<double>(hits) / (kSuper * kSuper);
        }
        for (int c = 0; c < C; ++c) {
          const double b = background[(static_cast<std::size_t>(y) * R + x) * C + c];
          frame[(y * R + x) * C + c] = static_cast<float>(std::clamp(b * (1 - cover) + fg[c] * cover, 0.0, 1.0));
        }
      }
    const double v = speed[std::min(t / wf, n_windows)];
    px = std::fmod(px + dir_x * v + R, static_cast<double>(R));
    py = std::fmod(py + dir_y * v + R, static_cast<double>(R));
  }
  return out;
}

/// Labels are balanced: video i gets class i mod n_classes.
inline Dataset generate(const DatasetSpec& spec, const Rng& rng) {
  validate_dataset_spec(spec);
  Dataset d{spec, {}};
  d.samples.reserve(spec.n_videos);
  for (int i = 0; i < spec.n_videos; ++i)
    d.samples.push_back(generate_one(spec, i, i % spec.n_classes(), rng.derive(static_cast<std::uint64_t>(i))));
  return d;
}

inline Dataset generate(const DatasetSpec& spec) { return generate(spec, Rng(spec.seed)); }

/// One epoch of index batches. Sizes are batch_size except possibly the last.
inline std::vector<std::vector<std::size_t>> iterate(std::size_t n, int batch_size, bool shuffle, Rng& rng) {
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

// ---------------------------------------------------------------------------
// Spec text and on-disk format
// ---------------------------------------------------------------------------

inline std::string serialize_dataset_spec(const DatasetSpec& s) {
  std::ostringstream os;
  os << "kind = " << to_string(s.kind) << "\n"
     << "n_videos = " << s.n_videos << "\n"
     << "video_length_frames = " << s.video_length_frames << "\n"
     << "resolution = " << s.resolution << "\n"
     << "channels = " << s.channels << "\n"
     << "fps = " << detail::fmt_double(s.fps) << "\n"
     << "classes = ";
  for (std::size_t i = 0; i < s.classes.size(); ++i) os << (i ? "," : "") << s.classes[i];
  os << "\n"
     << "speed_min = " << detail::fmt_double(s.speed_min) << "\n"
     << "speed_max = " << detail::fmt_double(s.speed_max) << "\n"
     << "static_window_prob = " << detail::fmt_double(s.static_window_prob) << "\n"
     << "sprite_radius_min = " << detail::fmt_double(s.sprite_radius_min) << "\n"
     << "sprite_radius_max = " << detail::fmt_double(s.sprite_radius_max) << "\n"
     << "texture_amplitude = " << detail::fmt_double(s.texture_amplitude) << "\n"
     << "seed = " << s.seed << "\n";
  return os.str();
}

inline DatasetSpec parse_dataset_spec(std::string_view text) {
  using namespace detail;
  DatasetSpec s;
  for_each_kv(text, [&](const std::string& k, const std::string& v) {
    if (k == "kind") {
      if (v == "motion") s.kind = DatasetKind::Motion;
      else if (v == "appearance") s.kind = DatasetKind::Appearance;
      else throw InputError("kind must be motion or appearance");
    } else if (k == "n_videos") s.n_videos = static_cast<int>(parse_int(v));
    else if (k == "video_length_frames") s.video_length_frames = static_cast<int>(parse_int(v));
    else if (k == "resolution") s.resolution = static_cast<int>(parse_int(v));
    else if (k == "channels") s.channels = static_cast<int>(parse_int(v));
    else if (k == "fps") s.fps = parse_double(v);
    else if (k == "classes") {
      s.classes.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) s.classes.push_back(trim(item));
    } else if (k == "speed_min") s.speed_min = parse_double(v);
    else if (k == "speed_max") s.speed_max = parse_double(v);
    else if (k == "static_window_prob") s.static_window_prob = parse_double(v);
    else if (k == "sprite_radius_min") s.sprite_radius_min = parse_double(v);
    else if (k == "sprite_radius_max") s.sprite_radius_max = parse_double(v);
    else if (k == "texture_amplitude") s.texture_amplitude = parse_double(v);
    else if (k == "seed") s.seed = std::stoull(v);
    else throw InputError("unknown dataset spec key '" + k + "'");
  });
  return s;
}

namespace io {

/// Writes floats as little-endian IEEE-754 binary32 regardless of host order.
inline void write_f32(std::ostream& os, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      auto u = std::bit_cast<std::uint32_t>(data[i]);
      char b[4] = {char(u), char(u >> 8), char(u >> 16), char(u >> 24)};
      os.write(b, 4);
    }
  }
}

inline void read_f32(std::istream& is, float* data, std::size_t n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw InputError("truncated float array");
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      auto u = std::bit_cast<std::uint32_t>(data[i]);
      u = (u >> 24) | ((u >> 8) & 0xff00) | ((u << 8) & 0xff0000) | (u << 24);
      data[i] = std::bit_cast<float>(u);
    }
  }
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw InputError("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace io

/// Directory layout:
///   manifest.json          format, spec, dtype "float32", byte_order "little",
///                          layout "T,H,W,C", fps, classes, and per sample
///                          {id, label, file, shape, motion_ground_truth}
///   video_000000.f32 ...   raw row-major frames
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json m;
  m["format"] = "scvrl-dataset";
  m["version"] = 1;
  m["spec"] = serialize_dataset_spec(d.spec);
  m["dtype"] = "float32";
  m["byte_order"] = "little";
  m["layout"] = "T,H,W,C";
  m["fps"] = d.spec.fps;
  m["classes"] = d.spec.classes;
  m["samples"] = nlohmann::json::array();
  for (const auto& s : d.samples) {
    char name[32];
    std::snprintf(name, sizeof name, "video_%06d.f32", s.id);
    std::ofstream os(dir / name, std::ios::binary);
    io::write_f32(os, s.video.data.data(), s.video.data.size());
    if (!os) throw InputError("failed writing " + (dir / name).string());
    m["samples"].push_back({{"id", s.id},
                            {"label", s.label},
                            {"file", name},
                            {"shape", {s.video.frames, s.video.height, s.video.width, s.video.channels}},
                            {"motion_ground_truth", s.motion_ground_truth}});
  }
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  os << m.dump(1) << "\n";
  if (!os) throw InputError("failed writing manifest in " + dir.string());
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad dataset manifest in " + dir.string() + ": " + e.what());
  }
  if (m.value("format", "") != "scvrl-dataset") throw InputError("not a dataset directory: " + dir.string());
  Dataset d;
  d.spec = parse_dataset_spec(m.at("spec").get<std::string>());
  const double fps = m.at("fps").get<double>();
  for (const auto& e : m.at("samples")) {
    SyntheticSample s;
    s.id = e.at("id").get<int>();
    s.label = e.at("label").get<int>();
    s.motion_ground_truth = e.at("motion_ground_truth").get<std::vector<double>>();
    const auto shape = e.at("shape").get<std::vector<int>>();
    if (shape.size() != 4) throw InputError("bad sample shape in manifest");
    s.video = VideoTensor(shape[0], shape[1], shape[2], shape[3], fps);
    std::ifstream is(dir / e.at("file").get<std::string>(), std::ios::binary);
    if (!is) throw InputError("missing sample file " + e.at("file").get<std::string>());
    io::read_f32(is, s.video.data.data(), s.video.data.size());
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace scvrl

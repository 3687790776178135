#pragma once

// Motion-strength profiling and targeted window sampling.
//
// Per frame pair, the motion field is the channel-mean absolute frame
// difference (stand-in for flow magnitude). Its Sobel edge map suppresses
// uniform change; the median of the top_k edge values scores the frame, the
// median of frame scores inside a 1-second window gives the window amplitude
// m_i, and p_i = softmax(m_i / beta) drives window sampling.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "scvrl/core.hpp"

namespace scvrl {

/// Dense 2-D or 3-D real field, row-major.
struct Field {
  int depth = 1;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  [[nodiscard]] double at(int t, int y, int x) const {
    return data[(static_cast<std::size_t>(t) * height + y) * width + x];
  }
  double& at(int t, int y, int x) { return data[(static_cast<std::size_t>(t) * height + y) * width + x]; }
  [[nodiscard]] double at(int y, int x) const { return at(0, y, x); }

  /// Slice t of a 3-D field as a 2-D field.
  [[nodiscard]] Field slice(int t) const {
    Field f{1, height, width, {}};
    const auto n = static_cast<std::size_t>(height) * width;
    f.data.assign(data.begin() + static_cast<std::ptrdiff_t>(t * n),
                  data.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
    return f;
  }
};

struct MotionProfile {
  std::vector<double> amplitudes;
  std::vector<double> probabilities;
  double beta_used = 5.0;
  int top_k_used = 0;
  std::vector<std::string> warnings;

  [[nodiscard]] int windows() const { return static_cast<int>(amplitudes.size()); }
};

/// [T-1 x H x W]: channel-mean |frame_{t+1} - frame_t|.
inline Field motion_magnitude_field(const VideoTensor& v) {
  if (v.frames < 2) throw InputError("need at least two frames");
  Field f{v.frames - 1, v.height, v.width, {}};
  f.data.resize(static_cast<std::size_t>(f.depth) * v.height * v.width);
  const double inv_c = 1.0 / v.channels;
  std::size_t o = 0;
  for (int t = 0; t + 1 < v.frames; ++t) {
    const float* a = v.frame(t);
    const float* b = v.frame(t + 1);
    for (int p = 0; p < v.height * v.width; ++p, ++o) {
      double s = 0;
      for (int c = 0; c < v.channels; ++c)
        s += std::abs(static_cast<double>(b[p * v.channels + c]) - static_cast<double>(a[p * v.channels + c]));
      f.data[o] = s * inv_c;
    }
  }
  return f;
}

/// Sobel gradient magnitude with replicate border padding.
inline Field edge_map(const Field& in) {
  if (in.depth != 1) throw InputError("edge_map expects a 2-D field");
  if (in.height < 3 || in.width < 3) throw InputError("edge_map needs a field of at least 3x3");
  const int h = in.height, w = in.width;
  auto px = [&](int y, int x) {
    return in.data[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };
  Field out{1, h, w, std::vector<double>(static_cast<std::size_t>(h) * w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      out.data[static_cast<std::size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

/// Median; an even count averages the two central order statistics.
inline double median(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median of empty set");
  const auto n = xs.size();
  const auto mid = xs.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(xs.begin(), mid, xs.end());
  const double hi = *mid;
  if (n % 2) return hi;
  const double lo = *std::max_element(xs.begin(), mid);
  return 0.5 * (lo + hi);
}

/// Median of the k largest values. Ties rank by lower index first.
inline double top_k_median(const std::vector<double>& values, int k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto kk = static_cast<std::size_t>(std::min<std::size_t>(k, values.size()));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && a < b);
                    });
  std::vector<double> top(kk);
  for (std::size_t i = 0; i < kk; ++i) top[i] = values[idx[i]];
  return median(std::move(top));
}

/// softmax(m / beta); beta = +inf gives the uniform distribution.
inline std::vector<double> window_probabilities(const std::vector<double>& m, double beta) {
  std::vector<double> p(m.size(), 1.0 / static_cast<double>(m.size()));
  if (std::isinf(beta)) return p;
  const double mx = *std::max_element(m.begin(), m.end());
  double z = 0;
  for (std::size_t i = 0; i < m.size(); ++i) z += (p[i] = std::exp((m[i] - mx) / beta));
  for (auto& v : p) v /= z;
  return p;
}

/// Frames per 1-second window.
inline int window_frames(const VideoTensor& v) { return std::max(1, static_cast<int>(std::lround(v.fps))); }

inline int window_count(const VideoTensor& v) { return v.frames / window_frames(v); }

/// Window amplitudes and sampling probabilities for a video. Window i owns
/// the frame transitions t -> t+1 whose first frame t lies in the window.
inline MotionProfile profile(const VideoTensor& v, int top_k, double beta) {
  if (top_k < 1) throw InputError("top_k must be >= 1");
  if (!(beta > 0)) throw InputError("beta must be > 0");
  const int wf = window_frames(v);
  const int n_windows = v.frames / wf;
  if (n_windows < 1 || v.frames < 2)
    throw InputError("video of " + std::to_string(v.frames) + " frames does not span one " + std::to_string(wf) +
                     "-frame window");
  MotionProfile prof;
  prof.beta_used = beta;
  prof.top_k_used = top_k;
  if (top_k > v.height * v.width) {
    prof.top_k_used = v.height * v.width;
    prof.warnings.push_back("top_k " + std::to_string(top_k) + " exceeds frame size; clamped to " +
                            std::to_string(prof.top_k_used));
  }
  const Field motion = motion_magnitude_field(v);
  std::vector<double> frame_score(motion.depth);
  for (int t = 0; t < motion.depth; ++t) frame_score[t] = top_k_median(edge_map(motion.slice(t)).data, prof.top_k_used);
  for (int i = 0; i < n_windows; ++i) {
    std::vector<double> s;
    for (int t = i * wf; t < (i + 1) * wf && t < motion.depth; ++t) s.push_back(frame_score[t]);
    if (s.empty()) s.push_back(frame_score.back());  // single-frame final window
    prof.amplitudes.push_back(median(std::move(s)));
  }
  prof.probabilities = window_probabilities(prof.amplitudes, beta);
  return prof;
}

/// Draws window i with probability p_i (inverse CDF on one uniform).
inline int sample_window(const MotionProfile& prof, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  const int n = static_cast<int>(prof.probabilities.size());
  for (int i = 0; i < n; ++i) {
    acc += prof.probabilities[i];
    if (u < acc) return i;
  }
  return n - 1;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

}  // namespace scvrl

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "scvrl/core.hpp"

namespace scvrl {

struct AugmentPolicy {
  int crop_size = 32;
  double scale_min = 0.5;  // crop area as a fraction of the frame
  double scale_max = 1.0;
  double p_gray = 0.2;
  double p_flip = 0.5;
  double p_blur = 0.5;
  double p_color = 0.8;
  double color_jitter = 0.4;
  int temporal_jitter = 1;

  static AugmentPolicy from(const Config& c) {
    return {c.crop_size, c.crop_scale_min, c.crop_scale_max, c.p_gray, c.p_flip,
            c.p_blur,    c.p_color,        c.color_jitter,   c.temporal_jitter};
  }

  /// Center crop at full scale with every random transform disabled.
  static AugmentPolicy identity(int crop_size) { return {crop_size, 1.0, 1.0, 0, 0, 0, 0, 0, 0}; }
};

/// One concrete draw of the augmentation family, applied to every frame.
struct AugmentDraw {
  int crop_x = 0;
  int crop_y = 0;
  int crop_side = 0;
  bool flip = false;
  bool gray = false;
  double blur_sigma = 0;  // 0: no blur
  bool color = false;
  double brightness = 1;
  double contrast = 1;
  double saturation = 1;
};

inline AugmentDraw draw_augment(const AugmentPolicy& pol, int height, int width, Rng& rng) {
  if (pol.crop_size > height || pol.crop_size > width)
    throw InputError("crop size " + std::to_string(pol.crop_size) + " larger than input " + std::to_string(height) +
                     "x" + std::to_string(width));
  AugmentDraw d;
  const int side_max = std::min(height, width);
  const double scale = rng.uniform(pol.scale_min, pol.scale_max);
  d.crop_side = std::clamp(static_cast<int>(std::lround(std::sqrt(scale) * side_max)), 1, side_max);
  d.crop_x = static_cast<int>(rng.uniform_int(0L, static_cast<long>(width - d.crop_side)));
  d.crop_y = static_cast<int>(rng.uniform_int(0L, static_cast<long>(height - d.crop_side)));
  if (pol.scale_min == 1.0 && pol.scale_max == 1.0) {
    d.crop_x = (width - d.crop_side) / 2;
    d.crop_y = (height - d.crop_side) / 2;
  }
  d.flip = rng.bernoulli(pol.p_flip);
  d.color = rng.bernoulli(pol.p_color);
  const double j = pol.color_jitter;
  d.brightness = rng.uniform(1 - j, 1 + j);
  d.contrast = rng.uniform(1 - j, 1 + j);
  d.saturation = rng.uniform(1 - j, 1 + j);
  d.gray = rng.bernoulli(pol.p_gray);
  const bool blur = rng.bernoulli(pol.p_blur);
  const double sigma = rng.uniform(0.1, 2.0);
  d.blur_sigma = blur ? sigma : 0.0;
  return d;
}

namespace detail {

inline double luma(const float* px) { return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]; }

/// Bilinear resize of a square region to out x out (half-pixel centers).
inline void crop_resize(const VideoTensor& in, const AugmentDraw& d, int out, VideoTensor& dst) {
  const double s = static_cast<double>(d.crop_side) / out;
  const int ch = in.channels;
  for (int t = 0; t < in.frames; ++t)
    for (int y = 0; y < out; ++y) {
      const double sy = std::clamp((y + 0.5) * s - 0.5, 0.0, d.crop_side - 1.0) + d.crop_y;
      const int y0 = static_cast<int>(std::floor(sy));
      const int y1 = std::min(y0 + 1, in.height - 1);
      const double fy = sy - y0;
      for (int x = 0; x < out; ++x) {
        const double sx = std::clamp((x + 0.5) * s - 0.5, 0.0, d.crop_side - 1.0) + d.crop_x;
        const int x0 = static_cast<int>(std::floor(sx));
        const int x1 = std::min(x0 + 1, in.width - 1);
        const double fx = sx - x0;
        for (int c = 0; c < ch; ++c) {
          double v = in.at(t, y0, x0, c);
          if (fy != 0 || fx != 0)
            v = (1 - fy) * ((1 - fx) * in.at(t, y0, x0, c) + fx * in.at(t, y0, x1, c)) +
                fy * ((1 - fx) * in.at(t, y1, x0, c) + fx * in.at(t, y1, x1, c));
          dst.at(t, y, x, c) = static_cast<float>(v);
        }
      }
    }
}

inline std::vector<double> gaussian_kernel(double sigma) {
  int size = static_cast<int>(std::ceil(4 * sigma));
  if (size % 2 == 0) ++size;
  const int r = size / 2;
  std::vector<double> k(size);
  double z = 0;
  for (int i = -r; i <= r; ++i) z += (k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= z;
  return k;
}

inline void blur(VideoTensor& v, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size()) / 2;
  if (r == 0) return;
  const int h = v.height, w = v.width, ch = v.channels;
  std::vector<float> tmp(v.frame_size());
  for (int t = 0; t < v.frames; ++t) {
    float* f = v.frame(t);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < ch; ++c) {
          double s = 0;
          for (int i = -r; i <= r; ++i) s += k[i + r] * f[(y * w + std::clamp(x + i, 0, w - 1)) * ch + c];
          tmp[(y * w + x) * ch + c] = static_cast<float>(s);
        }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < ch; ++c) {
          double s = 0;
          for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[(std::clamp(y + i, 0, h - 1) * w + x) * ch + c];
          f[(y * w + x) * ch + c] = static_cast<float>(s);
        }
  }
}

}  // namespace detail

/// Applies one draw identically to every frame: crop+resize, flip, colour
/// jitter, grayscale, blur, then clamp to [0,1].
inline VideoTensor apply_draw(const VideoTensor& clip, const AugmentDraw& d, int crop_size) {
  VideoTensor out(clip.frames, crop_size, crop_size, clip.channels, clip.fps);
  detail::crop_resize(clip, d, crop_size, out);
  const int ch = out.channels;
  const std::size_t pixels = out.data.size() / ch;
  if (d.flip)
    for (int t = 0; t < out.frames; ++t)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width / 2; ++x)
          for (int c = 0; c < ch; ++c) std::swap(out.at(t, y, x, c), out.at(t, y, out.width - 1 - x, c));
  if (d.color) {
    for (auto& v : out.data) v = static_cast<float>(std::clamp(v * d.brightness, 0.0, 1.0));
    double mean = 0;
    for (std::size_t p = 0; p < pixels; ++p)
      mean += ch == 3 ? detail::luma(&out.data[p * 3]) : out.data[p];
    mean /= static_cast<double>(pixels);
    for (auto& v : out.data) v = static_cast<float>(std::clamp((v - mean) * d.contrast + mean, 0.0, 1.0));
    if (ch == 3)
      for (std::size_t p = 0; p < pixels; ++p) {
        float* px = &out.data[p * 3];
        const double g = detail::luma(px);
        for (int c = 0; c < 3; ++c) px[c] = static_cast<float>(std::clamp(g + (px[c] - g) * d.saturation, 0.0, 1.0));
      }
  }
  if (d.gray && ch == 3)
    for (std::size_t p = 0; p < pixels; ++p) {
      float* px = &out.data[p * 3];
      const auto g = static_cast<float>(detail::luma(px));
      px[0] = px[1] = px[2] = g;
    }
  if (d.blur_sigma > 0) detail::blur(out, d.blur_sigma);
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

inline VideoTensor apply_policy(const VideoTensor& clip, const AugmentPolicy& pol, Rng& rng) {
  return apply_draw(clip, draw_augment(pol, clip.height, clip.width, rng), pol.crop_size);
}

// ---------------------------------------------------------------------------
// Group permutations
// ---------------------------------------------------------------------------

struct GroupPermutation {
  int group_size = 2;
  std::vector<int> order;  // output group j = input group order[j]

  [[nodiscard]] bool is_identity() const {
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i] != static_cast<int>(i)) return false;
    return true;
  }

  [[nodiscard]] GroupPermutation inverse() const {
    GroupPermutation inv{group_size, std::vector<int>(order.size())};
    for (std::size_t j = 0; j < order.size(); ++j) inv.order[order[j]] = static_cast<int>(j);
    return inv;
  }

  [[nodiscard]] bool is_bijection() const {
    std::vector<bool> seen(order.size(), false);
    for (int o : order) {
      if (o < 0 || o >= static_cast<int>(order.size()) || seen[o]) return false;
      seen[o] = true;
    }
    return true;
  }

  static GroupPermutation identity(int n_groups, int g) {
    GroupPermutation p{g, std::vector<int>(n_groups)};
    std::iota(p.order.begin(), p.order.end(), 0);
    return p;
  }

  friend bool operator==(const GroupPermutation&, const GroupPermutation&) = default;
  friend auto operator<=>(const GroupPermutation&, const GroupPermutation&) = default;
};

inline VideoTensor group_shuffle(const VideoTensor& clip, const GroupPermutation& perm) {
  const int g = perm.group_size;
  if (g < 1 || clip.frames % g != 0)
    throw InputError("group size " + std::to_string(g) + " does not divide clip length " +
                     std::to_string(clip.frames));
  if (static_cast<int>(perm.order.size()) != clip.frames / g || !perm.is_bijection())
    throw InputError("permutation must be a bijection over " + std::to_string(clip.frames / g) + " groups");
  VideoTensor out = clip;
  const auto fs = clip.frame_size();
  for (std::size_t j = 0; j < perm.order.size(); ++j)
    for (int f = 0; f < g; ++f)
      std::copy_n(clip.frame(perm.order[j] * g + f), fs, out.frame(static_cast<int>(j) * g + f));
  return out;
}

namespace detail {

inline std::uint64_t factorial_capped(int n, std::uint64_t cap) {
  std::uint64_t f = 1;
  for (int i = 2; i <= n; ++i) {
    if (f > cap / static_cast<std::uint64_t>(i)) return cap;
    f *= static_cast<std::uint64_t>(i);
  }
  return f;
}

/// Lexicographic rank -> permutation (Lehmer decoding). Rank 0 is identity.
inline std::vector<int> unrank_permutation(int n, std::uint64_t rank) {
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> out;
  for (int i = n; i >= 1; --i) {
    const std::uint64_t f = factorial_capped(i - 1, ~0ULL);
    const auto q = static_cast<std::size_t>(rank / f);
    rank %= f;
    out.push_back(pool[q]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(q));
  }
  return out;
}

}  // namespace detail

/// n distinct non-identity permutations of n_groups groups, uniform without
/// replacement. Identity is excluded because it would duplicate the positive.
inline std::vector<GroupPermutation> sample_negative_perms(int n_groups, int n, Rng& rng, int group_size = 2) {
  if (n_groups < 1 || n < 0) throw InputError("sample_negative_perms: bad arguments");
  constexpr std::uint64_t kCap = 1ULL << 62;
  const std::uint64_t total = detail::factorial_capped(n_groups, kCap);
  if (static_cast<std::uint64_t>(n) > total - 1)
    throw InputError("requested " + std::to_string(n) + " negative permutations but only " +
                     std::to_string(total - 1) + " non-identity permutations of " + std::to_string(n_groups) +
                     " groups exist");
  std::vector<GroupPermutation> out;
  if (n_groups <= 20 && total < kCap) {
    std::set<std::uint64_t> used;
    while (static_cast<int>(out.size()) < n) {
      const std::uint64_t r = 1 + rng.uniform_int(total - 1);
      if (used.insert(r).second) out.push_back({group_size, detail::unrank_permutation(n_groups, r)});
    }
  } else {
    std::set<std::vector<int>> used;
    while (static_cast<int>(out.size()) < n) {
      auto p = GroupPermutation::identity(n_groups, group_size);
      rng.shuffle(p.order.begin(), p.order.end());
      if (!p.is_identity() && used.insert(p.order).second) out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace scvrl

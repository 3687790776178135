#pragma once

// Shared fixtures for unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "scvrl/scvrl.hpp"

namespace scvrl::fixtures {

/// Two-block backbone on 4x16x16 clips, small enough for full finite
/// differences in double precision.
inline Config micro_config() {
  Config c;
  c.clip_length = 4;
  c.crop_size = 16;
  c.patch_size = 4;
  c.stage_channels = {8, 16};
  c.stage_blocks = {1, 1};
  c.stage_heads = {1, 2};
  c.mlp_ratio = 2;
  c.head_hidden = 8;
  c.head_out = 4;
  c.n_temporal_negatives = 1;
  c.bank_size = 8;
  c.bank_warmup = 4;
  c.tau = 0.5;
  return c;
}

inline VideoTensor random_clip(int t, int h, int w, int c, Rng& rng) {
  VideoTensor v(t, h, w, c);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform());
  return v;
}

inline std::vector<float> random_unit(int dim, Rng& rng) {
  std::vector<float> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = static_cast<float>(rng.normal());
    n += static_cast<double>(x) * x;
  }
  for (auto& x : v) x = static_cast<float>(x / std::sqrt(n));
  return v;
}

inline EmbeddingMatrix random_bank(int rows, int dim, Rng& rng) {
  EmbeddingMatrix m{rows, dim, {}};
  for (int r = 0; r < rows; ++r) {
    const auto u = random_unit(dim, rng);
    m.data.insert(m.data.end(), u.begin(), u.end());
  }
  return m;
}

/// Weights redrawn at a larger scale so every path carries signal.
template <class T>
void perturb(ModelState<T>& s, Rng& rng, double sigma) {
  for (auto& p : s.params())
    for (auto& v : p.data) v = static_cast<T>(static_cast<double>(v) + sigma * rng.normal());
}

struct GroupError {
  std::string name;
  double relative = 0;
};

/// Per-parameter-group relative error ||g - fd|| / max(||g||, ||fd||, floor)
/// of analytic gradients against central differences of `loss`.
template <class T, class LossFn, class GradFn>
std::vector<GroupError> finite_difference_errors(ModelState<T> s, LossFn&& loss, GradFn&& grad, double h,
                                                 double floor) {
  const auto g = grad(s);
  std::vector<GroupError> out;
  for (std::size_t k = 0; k < s.params().size(); ++k) {
    auto& p = s.params()[k];
    double diff = 0, gn = 0, fn = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const T x0 = p.data[i];
      p.data[i] = x0 + static_cast<T>(h);
      const double fp = loss(s);
      p.data[i] = x0 - static_cast<T>(h);
      const double fm = loss(s);
      p.data[i] = x0;
      const double fd = (fp - fm) / (2 * h);
      const double a = static_cast<double>(g[k][i]);
      diff += (a - fd) * (a - fd);
      gn += a * a;
      fn += fd * fd;
    }
    out.push_back({p.name, std::sqrt(diff) / std::max({std::sqrt(gn), std::sqrt(fn), floor})});
  }
  return out;
}

}  // namespace scvrl::fixtures

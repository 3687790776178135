#pragma once

#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "scvrl/autograd.hpp"
#include "scvrl/core.hpp"

namespace scvrl {

/// Geometry and width of the video encoder. Derived from Config; the input
/// clip geometry is part of it because positional embeddings are sized by it.
struct BackboneConfig {
  int clip_length = 8;
  int crop_size = 32;
  int channels = 3;
  int temporal_kernel = 2;
  int temporal_stride = 2;
  int patch_size = 4;
  int patch_stride = 4;
  std::vector<int> stage_channels{16, 32, 64, 128};
  std::vector<int> stage_blocks{1, 1, 2, 1};
  std::vector<int> stage_heads{1, 2, 4, 8};
  int mlp_ratio = 4;
  PoolingMode pooling_mode = PoolingMode::CLS;
  HeadsMode heads_mode = HeadsMode::Separate;
  int head_hidden = 64;
  int head_out = 16;
  bool pretext_head = false;

  [[nodiscard]] int temporal_padding() const { return temporal_kernel == 3 ? 1 : 0; }
  [[nodiscard]] int spatial_padding() const { return (patch_size - patch_stride + 1) / 2; }
  [[nodiscard]] ag::Grid token_grid() const {
    const int t = (clip_length + 2 * temporal_padding() - temporal_kernel) / temporal_stride + 1;
    const int s = (crop_size + 2 * spatial_padding() - patch_size) / patch_stride + 1;
    return {t, s, s};
  }
  [[nodiscard]] int repr_dim() const { return stage_channels.back(); }

  static BackboneConfig from(const Config& c) {
    BackboneConfig b;
    b.clip_length = c.clip_length;
    b.crop_size = c.crop_size;
    b.temporal_kernel = c.temporal_kernel;
    b.temporal_stride = c.group_size;
    b.patch_size = c.patch_size;
    b.patch_stride = c.patch_size;
    b.stage_channels = c.stage_channels;
    b.stage_blocks = c.stage_blocks;
    b.stage_heads = c.stage_heads;
    b.mlp_ratio = c.mlp_ratio;
    b.pooling_mode = c.pooling_mode;
    b.heads_mode = c.heads_mode;
    b.head_hidden = c.head_hidden;
    b.head_out = c.head_out;
    b.pretext_head = c.objective == Objective::Pretext;
    return b;
  }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// One transformer block of the pooled-attention backbone.
struct BlockSpec {
  std::string prefix;
  int stage = 0;
  int dim_in = 0;
  int dim_out = 0;
  int heads = 1;
  int q_stride = 1;   // spatial pooling of queries and of the residual stream
  int kv_stride = 1;  // spatial pooling of keys/values
  ag::Grid grid_in;
  ag::Grid grid_out;
};

/// Pools K/V down to roughly 2x2 spatial positions, the way multiscale
/// vision transformers shrink their key/value sequence in early stages.
inline int kv_stride_for(const ag::Grid& g) {
  for (int s : {4, 2})
    if (g.h % s == 0 && g.w % s == 0 && g.h / s >= 2) return s;
  return 1;
}

inline std::vector<BlockSpec> block_layout(const BackboneConfig& b) {
  std::vector<BlockSpec> out;
  ag::Grid grid = b.token_grid();
  int dim = b.stage_channels.front();
  for (std::size_t s = 0; s < b.stage_channels.size(); ++s) {
    for (int j = 0; j < b.stage_blocks[s]; ++j) {
      BlockSpec blk;
      blk.prefix = "s" + std::to_string(s + 1) + ".b" + std::to_string(j) + ".";
      blk.stage = static_cast<int>(s) + 1;
      blk.dim_in = dim;
      blk.dim_out = b.stage_channels[s];
      blk.heads = b.stage_heads[s];
      blk.q_stride = (s > 0 && j == 0 && grid.h % 2 == 0 && grid.w % 2 == 0) ? 2 : 1;
      blk.kv_stride = kv_stride_for(grid);
      blk.grid_in = grid;
      blk.grid_out = {grid.t, grid.h / blk.q_stride, grid.w / blk.q_stride};
      out.push_back(blk);
      grid = blk.grid_out;
      dim = blk.dim_out;
    }
  }
  return out;
}

template <class T>
struct Param {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<T> data;
  bool decay = true;  // false for norms, biases, CLS token, positional embeddings

  friend bool operator==(const Param&, const Param&) = default;
};

/// Every trainable tensor of the encoder plus its heads, in a fixed order.
template <class T>
class ModelState {
 public:
  ModelState() = default;
  explicit ModelState(BackboneConfig cfg) : cfg_(std::move(cfg)) {}

  [[nodiscard]] const BackboneConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<Param<T>>& params() const { return params_; }
  std::vector<Param<T>>& params() { return params_; }

  void add(std::string name, int rows, int cols, bool decay) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back(Param<T>{std::move(name), rows, cols,
                               std::vector<T>(static_cast<std::size_t>(rows) * cols, T(0)), decay});
  }

  [[nodiscard]] bool has(const std::string& name) const { return index_.count(name) > 0; }
  [[nodiscard]] int index(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InputError("no parameter named " + name);
    return it->second;
  }
  Param<T>& operator[](const std::string& name) { return params_[index(name)]; }
  const Param<T>& operator[](const std::string& name) const { return params_[index(name)]; }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.data.size();
    return n;
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& p : params_)
      for (T v : p.data)
        if (!std::isfinite(v)) return false;
    return true;
  }

  template <class U>
  [[nodiscard]] ModelState<U> cast() const {
    ModelState<U> out(cfg_);
    for (const auto& p : params_) {
      out.add(p.name, p.rows, p.cols, p.decay);
      auto& q = out.params().back();
      std::transform(p.data.begin(), p.data.end(), q.data.begin(), [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

  friend bool operator==(const ModelState& a, const ModelState& b) {
    return a.cfg_ == b.cfg_ && a.params_ == b.params_;
  }

 private:
  BackboneConfig cfg_;
  std::vector<Param<T>> params_;
  std::map<std::string, int> index_;
};

/// Per-parameter gradient buffers aligned with ModelState::params().
template <class T>
using Gradients = std::vector<std::vector<T>>;

template <class T>
Gradients<T> zero_gradients(const ModelState<T>& s) {
  Gradients<T> g;
  for (const auto& p : s.params()) g.emplace_back(p.data.size(), T(0));
  return g;
}

namespace detail {

template <class T>
void add_block_params(ModelState<T>& s, const BlockSpec& b, int mlp_ratio) {
  const auto& p = b.prefix;
  s.add(p + "norm1.g", 1, b.dim_in, false);
  s.add(p + "norm1.b", 1, b.dim_in, false);
  for (const char* n : {"attn.q", "attn.k", "attn.v"}) {
    s.add(p + n + ".w", b.dim_in, b.dim_out, true);
    s.add(p + n + ".b", 1, b.dim_out, false);
  }
  s.add(p + "attn.proj.w", b.dim_out, b.dim_out, true);
  s.add(p + "attn.proj.b", 1, b.dim_out, false);
  if (b.dim_in != b.dim_out) s.add(p + "skip.w", b.dim_in, b.dim_out, true);
  s.add(p + "norm2.g", 1, b.dim_out, false);
  s.add(p + "norm2.b", 1, b.dim_out, false);
  s.add(p + "mlp.fc1.w", b.dim_out, b.dim_out * mlp_ratio, true);
  s.add(p + "mlp.fc1.b", 1, b.dim_out * mlp_ratio, false);
  s.add(p + "mlp.fc2.w", b.dim_out * mlp_ratio, b.dim_out, true);
  s.add(p + "mlp.fc2.b", 1, b.dim_out, false);
}

template <class T>
void add_head_params(ModelState<T>& s, const std::string& p, int in, int hidden, int out) {
  s.add(p + "fc1.w", in, hidden, true);
  s.add(p + "fc1.b", 1, hidden, false);
  s.add(p + "fc2.w", hidden, out, true);
  s.add(p + "fc2.b", 1, out, false);
}

}  // namespace detail

/// Allocates and initialises every parameter: truncated normal (sigma 0.02)
/// weights, zero biases, zero CLS token, unit norm gains.
template <class T>
ModelState<T> init_model(const BackboneConfig& b, Rng& rng) {
  ModelState<T> s(b);
  const auto grid = b.token_grid();
  const int c0 = b.stage_channels.front();
  s.add("cube.w", b.temporal_kernel * b.patch_size * b.patch_size * b.channels, c0, true);
  s.add("cube.b", 1, c0, false);
  s.add("cls", 1, c0, false);
  s.add("pos.time", grid.t, c0, false);
  s.add("pos.space", grid.h * grid.w, c0, false);
  for (const auto& blk : block_layout(b)) detail::add_block_params(s, blk, b.mlp_ratio);
  s.add("norm.g", 1, b.repr_dim(), false);
  s.add("norm.b", 1, b.repr_dim(), false);
  detail::add_head_params(s, "head_v.", b.repr_dim(), b.head_hidden, b.head_out);
  if (b.heads_mode == HeadsMode::Separate)
    detail::add_head_params(s, "head_t.", b.repr_dim(), b.head_hidden, b.head_out);
  if (b.pretext_head) {
    s.add("pretext.w", b.repr_dim(), 1, true);
    s.add("pretext.b", 1, 1, false);
  }
  for (auto& p : s.params()) {
    const bool gain = p.name.ends_with(".g");
    const bool weight = p.name.ends_with(".w") || p.name.starts_with("pos.");
    for (auto& v : p.data) v = gain ? T(1) : weight ? static_cast<T>(rng.truncated_normal(0.02)) : T(0);
  }
  return s;
}

/// Parameters of a ModelState bound as leaves of one tape.
template <class T>
struct Bound {
  const ModelState<T>* state = nullptr;
  ag::Tape<T>* tape = nullptr;
  std::vector<ag::Var> vars;

  ag::Var operator()(const std::string& name) const { return vars[state->index(name)]; }

  /// Gradients of every parameter after tape->backward().
  [[nodiscard]] Gradients<T> gradients() const {
    Gradients<T> g;
    for (auto v : vars) g.push_back(tape->grad(v));
    return g;
  }
};

template <class T>
Bound<T> bind(ag::Tape<T>& tape, const ModelState<T>& s, bool requires_grad) {
  Bound<T> b{&s, &tape, {}};
  b.vars.reserve(s.params().size());
  for (const auto& p : s.params()) b.vars.push_back(tape.leaf(p.rows, p.cols, p.data.data(), requires_grad));
  return b;
}

// Pixels are standardised before projection; zero padding is then mean grey.
inline constexpr float kPixelMean = 0.45f;
inline constexpr float kPixelStd = 0.225f;

/// im2col for the cube projection: one row per output token (t, y, x), one
/// column per kernel tap (dt, dy, dx, c). Out-of-range taps read zero.
template <class T>
std::vector<T> cube_columns(const VideoTensor& clip, const BackboneConfig& b) {
  if (clip.frames != b.clip_length || clip.height != b.crop_size || clip.width != b.crop_size ||
      clip.channels != b.channels)
    throw InputError("cube projection expects clip " + std::to_string(b.clip_length) + "x" +
                     std::to_string(b.crop_size) + "x" + std::to_string(b.crop_size) + "x" +
                     std::to_string(b.channels) + ", got " + clip.shape_string());
  if (b.clip_length % b.temporal_stride != 0)
    throw InputError("clip length " + std::to_string(b.clip_length) + " not divisible by temporal stride " +
                     std::to_string(b.temporal_stride));
  const auto g = b.token_grid();
  const int kt = b.temporal_kernel, p = b.patch_size, ch = b.channels;
  const int width = kt * p * p * ch;
  const int pt = b.temporal_padding(), ps = b.spatial_padding();
  std::vector<T> cols(static_cast<std::size_t>(g.size()) * width, T(0));
  std::size_t row = 0;
  for (int t = 0; t < g.t; ++t)
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x, ++row) {
        T* out = cols.data() + row * width;
        for (int dt = 0; dt < kt; ++dt) {
          const int ft = t * b.temporal_stride - pt + dt;
          if (ft < 0 || ft >= clip.frames) continue;
          for (int dy = 0; dy < p; ++dy) {
            const int iy = y * b.patch_stride - ps + dy;
            if (iy < 0 || iy >= clip.height) continue;
            for (int dx = 0; dx < p; ++dx) {
              const int ix = x * b.patch_stride - ps + dx;
              if (ix < 0 || ix >= clip.width) continue;
              const float* src = &clip.data[clip.index(ft, iy, ix, 0)];
              T* dst = out + ((dt * p + dy) * p + dx) * ch;
              for (int c = 0; c < ch; ++c) dst[c] = static_cast<T>((src[c] - kPixelMean) / kPixelStd);
            }
          }
        }
      }
  return cols;
}

/// Token grid [T' x H' x W' x C0] produced by the cube projection alone.
template <class T>
std::vector<T> cube_project(const ModelState<T>& s, const VideoTensor& clip) {
  ag::Tape<T> tape(false);
  const auto& b = s.config();
  const auto g = b.token_grid();
  auto cols = cube_columns<T>(clip, b);
  const int width = static_cast<int>(cols.size()) / g.size();
  auto x = tape.constant(g.size(), width, std::move(cols));
  const auto& w = s["cube.w"];
  const auto& bias = s["cube.b"];
  auto y = tape.linear(x, tape.leaf(w.rows, w.cols, w.data.data(), false),
                       tape.leaf(1, bias.cols, bias.data.data(), false));
  return tape.value(y);
}

struct ForwardResult {
  ag::Var repr;    // [1 x C_last]
  ag::Var tokens;  // [1 + grid.size() x C_last], CLS first
  ag::Grid grid;
};

namespace detail {

template <class T>
void check_finite(const ag::Tape<T>& tape, ag::Var v, const std::string& where) {
  for (T x : tape.value(v))
    if (!std::isfinite(x)) throw NumericalError("non-finite activation in " + where);
}

template <class T>
ag::Var block_forward(ag::Tape<T>& tp, const Bound<T>& P, const BlockSpec& b, ag::Var x) {
  const auto& p = b.prefix;
  auto h = tp.layer_norm(x, P(p + "norm1.g"), P(p + "norm1.b"));
  auto hq = tp.pool_tokens(h, b.grid_in, b.q_stride);
  auto hkv = tp.pool_tokens(h, b.grid_in, b.kv_stride);
  auto q = tp.linear(hq, P(p + "attn.q.w"), P(p + "attn.q.b"));
  auto k = tp.linear(hkv, P(p + "attn.k.w"), P(p + "attn.k.b"));
  auto v = tp.linear(hkv, P(p + "attn.v.w"), P(p + "attn.v.b"));
  auto a = tp.attention(q, k, v, b.heads);
  a = tp.linear(a, P(p + "attn.proj.w"), P(p + "attn.proj.b"));
  auto skip = tp.pool_tokens(x, b.grid_in, b.q_stride);
  if (b.dim_in != b.dim_out) skip = tp.matmul(skip, P(p + "skip.w"));
  x = tp.add(skip, a);
  auto m = tp.layer_norm(x, P(p + "norm2.g"), P(p + "norm2.b"));
  m = tp.gelu(tp.linear(m, P(p + "mlp.fc1.w"), P(p + "mlp.fc1.b")));
  m = tp.linear(m, P(p + "mlp.fc2.w"), P(p + "mlp.fc2.b"));
  return tp.add(x, m);
}

}  // namespace detail

/// Encodes a clip: cube projection, CLS prepend, positional embeddings,
/// pooled-attention stages, final norm, then CLS or token-mean readout.
template <class T>
ForwardResult forward(ag::Tape<T>& tp, const Bound<T>& P, const VideoTensor& clip) {
  const auto& b = P.state->config();
  auto grid = b.token_grid();
  auto cols = cube_columns<T>(clip, b);
  const int width = static_cast<int>(cols.size()) / grid.size();
  auto x = tp.linear(tp.constant(grid.size(), width, std::move(cols)), P("cube.w"), P("cube.b"));
  x = tp.prepend_row(P("cls"), x);
  x = tp.add_positional(x, P("pos.time"), P("pos.space"), grid);
  const auto layout = block_layout(b);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    x = detail::block_forward(tp, P, layout[i], x);
    grid = layout[i].grid_out;
    const bool stage_end = i + 1 == layout.size() || layout[i + 1].stage != layout[i].stage;
    if (stage_end) detail::check_finite(tp, x, "stage " + std::to_string(layout[i].stage));
  }
  x = tp.layer_norm(x, P("norm.g"), P("norm.b"));
  ag::Var repr = b.pooling_mode == PoolingMode::CLS ? tp.select_row(x, 0) : tp.mean_rows(x, 1, tp.rows(x));
  return {repr, x, grid};
}

enum class Head { Visual, Temporal };

/// linear -> ReLU -> linear -> L2 normalise. In shared mode both heads use
/// the visual head's parameters.
template <class T>
ag::Var head(ag::Tape<T>& tp, const Bound<T>& P, Head which, ag::Var repr) {
  const bool shared = P.state->config().heads_mode == HeadsMode::Shared;
  const std::string p = (which == Head::Visual || shared) ? "head_v." : "head_t.";
  if (tp.cols(repr) != P.state->config().repr_dim()) throw InputError("head input dimension mismatch");
  auto h = tp.relu(tp.linear(repr, P(p + "fc1.w"), P(p + "fc1.b")));
  h = tp.linear(h, P(p + "fc2.w"), P(p + "fc2.b"));
  return tp.l2_normalize(h);
}

/// Logit of the shuffled-vs-ordered classifier used by the pretext baseline.
template <class T>
ag::Var pretext_logit(ag::Tape<T>& tp, const Bound<T>& P, ag::Var repr) {
  return tp.linear(repr, P("pretext.w"), P("pretext.b"));
}

/// Gradient-free forward returning the backbone representation.
template <class T>
std::vector<T> encode(const ModelState<T>& s, const VideoTensor& clip) {
  ag::Tape<T> tp(false);
  auto P = bind(tp, s, false);
  return tp.value(forward(tp, P, clip).repr);
}

/// Gradient-free forward through backbone and one head.
template <class T>
std::vector<T> embed(const ModelState<T>& s, const VideoTensor& clip, Head which) {
  ag::Tape<T> tp(false);
  auto P = bind(tp, s, false);
  return tp.value(head(tp, P, which, forward(tp, P, clip).repr));
}

}  // namespace scvrl

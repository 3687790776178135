#pragma once

// Minimal reverse-mode automatic differentiation over row-major matrices.
//
// A Tape records every operation applied to its Vars; backward() replays the
// recorded closures in reverse order. Everything in the model is a token
// matrix [rows x cols], so a Var is always 2-D. A Tape constructed with
// record = false is a plain forward evaluator: no closures, no gradients.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scvrl/core.hpp"

namespace scvrl::ag {

struct Var {
  int id = -1;
  [[nodiscard]] bool valid() const { return id >= 0; }
};

/// Token-grid geometry of the patch rows of a token matrix.
struct Grid {
  int t = 0;
  int h = 0;
  int w = 0;
  [[nodiscard]] int size() const { return t * h * w; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

template <class T>
class Tape {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(256); }

  [[nodiscard]] bool recording() const { return record_; }
  [[nodiscard]] int rows(Var v) const { return nodes_[v.id].rows; }
  [[nodiscard]] int cols(Var v) const { return nodes_[v.id].cols; }
  [[nodiscard]] const std::vector<T>& value(Var v) const { return nodes_[v.id].value; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  [[nodiscard]] T scalar(Var v) const { return nodes_[v.id].value.at(0); }

  /// Gradient of the last backward() target w.r.t. v; zeros if v is unreachable.
  [[nodiscard]] const std::vector<T>& grad(Var v) const {
    const auto& n = nodes_[v.id];
    if (n.grad.empty()) {
      zero_.assign(n.value.size(), T(0));
      return zero_;
    }
    return n.grad;
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  Var constant(int rows, int cols, std::vector<T> values) {
    return push(rows, cols, std::move(values), false);
  }

  /// Leaf copied from external storage (typically a model parameter).
  Var leaf(int rows, int cols, const T* values, bool requires_grad) {
    std::vector<T> v(values, values + static_cast<std::size_t>(rows) * cols);
    return push(rows, cols, std::move(v), requires_grad && record_);
  }

  void backward(Var target) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (nodes_[target.id].value.size() != 1) throw std::logic_error("backward target must be scalar");
    for (std::size_t i = 0; i <= static_cast<std::size_t>(target.id); ++i)
      if (nodes_[i].requires_grad) nodes_[i].grad.assign(nodes_[i].value.size(), T(0));
    if (!nodes_[target.id].requires_grad) return;
    nodes_[target.id].grad[0] = T(1);
    for (int i = target.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (n.back && n.requires_grad) n.back(*this, i);
    }
  }

  // ---- ops ---------------------------------------------------------------

  /// y = x W + b, W stored [in x out].
  Var linear(Var x, Var w, Var b) {
    const int n = rows(x), in = cols(x), out = cols(w);
    if (rows(w) != in || (b.valid() && static_cast<int>(value(b).size()) != out))
      throw InputError("linear: shape mismatch");
    std::vector<T> y(static_cast<std::size_t>(n) * out);
    MapM Y(y.data(), n, out);
    Y.noalias() = cmap(x) * cmap(w);
    if (b.valid()) Y.rowwise() += cmap(b).row(0);
    return push_op(n, out, std::move(y), {x, w, b}, [x, w, b](Tape& tp, int self) {
      CMapM dY = tp.cgrad(self);
      if (tp.needs(x)) tp.gmap(x).noalias() += dY * tp.cmap(w).transpose();
      if (tp.needs(w)) tp.gmap(w).noalias() += tp.cmap(x).transpose() * dY;
      if (b.valid() && tp.needs(b)) tp.gmap(b).row(0) += dY.colwise().sum();
    });
  }

  Var matmul(Var a, Var b) { return linear(a, b, Var{}); }

  Var add(Var a, Var b) {
    if (rows(a) != rows(b) || cols(a) != cols(b)) throw InputError("add: shape mismatch");
    std::vector<T> y(value(a));
    const auto& vb = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += vb[i];
    return push_op(rows(a), cols(a), std::move(y), {a, b}, [a, b](Tape& tp, int self) {
      if (tp.needs(a)) tp.gmap(a) += tp.cgrad(self);
      if (tp.needs(b)) tp.gmap(b) += tp.cgrad(self);
    });
  }

  Var scale(Var a, T s) {
    std::vector<T> y(value(a));
    for (auto& e : y) e *= s;
    return push_op(rows(a), cols(a), std::move(y), {a}, [a, s](Tape& tp, int self) {
      tp.gmap(a) += s * tp.cgrad(self);
    });
  }

  /// Elementwise sum of equally shaped vars.
  Var sum(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::logic_error("sum of nothing");
    std::vector<T> y(value(xs[0]));
    for (std::size_t k = 1; k < xs.size(); ++k) {
      const auto& v = value(xs[k]);
      if (v.size() != y.size()) throw InputError("sum: shape mismatch");
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += v[i];
    }
    return push_op(rows(xs[0]), cols(xs[0]), std::move(y), xs, [xs](Tape& tp, int self) {
      for (Var x : xs)
        if (tp.needs(x)) tp.gmap(x) += tp.cgrad(self);
    });
  }

  Var relu(Var x) {
    std::vector<T> y(value(x));
    for (auto& e : y) e = e > T(0) ? e : T(0);
    return push_op(rows(x), cols(x), std::move(y), {x}, [x](Tape& tp, int self) {
      const auto& xv = tp.value(x);
      const auto& g = tp.nodes_[self].grad;
      auto& gx = tp.nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > T(0)) gx[i] += g[i];
    });
  }

  /// Exact (erf) GELU.
  Var gelu(Var x) {
    const auto& xv = value(x);
    std::vector<T> y(xv.size());
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
    return push_op(rows(x), cols(x), std::move(y), {x}, [x](Tape& tp, int self) {
      const auto& xv = tp.value(x);
      const auto& g = tp.nodes_[self].grad;
      auto& gx = tp.nodes_[x.id].grad;
      constexpr T inv_sqrt2 = T(0.70710678118654752440);
      constexpr T inv_sqrt2pi = T(0.39894228040143267794);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T a = xv[i];
        const T d = T(0.5) * (T(1) + std::erf(a * inv_sqrt2)) + a * inv_sqrt2pi * std::exp(T(-0.5) * a * a);
        gx[i] += g[i] * d;
      }
    });
  }

  /// Row-wise layer normalisation with affine gamma/beta ([1 x cols] each).
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const int n = rows(x), d = cols(x);
    std::vector<T> xhat(value(x).size()), rstd(n), y(value(x).size());
    const auto& xv = value(x);
    const auto& g = value(gamma);
    const auto& b = value(beta);
    for (int r = 0; r < n; ++r) {
      const T* row = xv.data() + static_cast<std::size_t>(r) * d;
      T mean = 0;
      for (int c = 0; c < d; ++c) mean += row[c];
      mean /= d;
      T var = 0;
      for (int c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
      var /= d;
      rstd[r] = T(1) / std::sqrt(var + eps);
      for (int c = 0; c < d; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * d + c;
        xhat[i] = (row[c] - mean) * rstd[r];
        y[i] = xhat[i] * g[c] + b[c];
      }
    }
    if (!record_) return push(n, d, std::move(y), false);
    return push_op(n, d, std::move(y), {x, gamma, beta},
                   [x, gamma, beta, n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tp, int self) {
                     const auto& gy = tp.nodes_[self].grad;
                     const auto& gv = tp.value(gamma);
                     const bool nx = tp.needs(x), ng = tp.needs(gamma), nb = tp.needs(beta);
                     std::vector<T> dxhat(d);
                     for (int r = 0; r < n; ++r) {
                       const std::size_t off = static_cast<std::size_t>(r) * d;
                       T m1 = 0, m2 = 0;
                       for (int c = 0; c < d; ++c) {
                         dxhat[c] = gy[off + c] * gv[c];
                         m1 += dxhat[c];
                         m2 += dxhat[c] * xhat[off + c];
                         if (ng) tp.nodes_[gamma.id].grad[c] += gy[off + c] * xhat[off + c];
                         if (nb) tp.nodes_[beta.id].grad[c] += gy[off + c];
                       }
                       if (!nx) continue;
                       m1 /= d;
                       m2 /= d;
                       auto& gx = tp.nodes_[x.id].grad;
                       for (int c = 0; c < d; ++c) gx[off + c] += rstd[r] * (dxhat[c] - m1 - xhat[off + c] * m2);
                     }
                   });
  }

  /// Multi-head scaled dot-product attention. q: [nq x d], k, v: [nk x d].
  Var attention(Var q, Var k, Var v, int heads) {
    const int nq = rows(q), nk = rows(k), d = cols(q);
    if (cols(k) != d || cols(v) != d || rows(v) != nk || d % heads != 0)
      throw InputError("attention: shape mismatch");
    const int dh = d / heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<T> y(static_cast<std::size_t>(nq) * d);
    std::vector<Mat> probs(record_ ? heads : 0);
    CMapM Q = cmap(q), K = cmap(k), V = cmap(v);
    MapM Y(y.data(), nq, d);
    Mat S;
    for (int h = 0; h < heads; ++h) {
      S.noalias() = sc * Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose();
      softmax_rows(S);
      Y.middleCols(h * dh, dh).noalias() = S * V.middleCols(h * dh, dh);
      if (record_) probs[h] = S;
    }
    return push_op(nq, d, std::move(y), {q, k, v},
                   [q, k, v, heads, dh, sc, probs = std::move(probs)](Tape& tp, int self) {
                     CMapM dY = tp.cgrad(self);
                     CMapM Q = tp.cmap(q), K = tp.cmap(k), V = tp.cmap(v);
                     Mat dP, dS;
                     for (int h = 0; h < heads; ++h) {
                       const Mat& P = probs[h];
                       const auto dYh = dY.middleCols(h * dh, dh);
                       if (tp.needs(v)) tp.gmap(v).middleCols(h * dh, dh).noalias() += P.transpose() * dYh;
                       dP.noalias() = dYh * V.middleCols(h * dh, dh).transpose();
                       Vec rs = (dP.cwiseProduct(P)).rowwise().sum();
                       dS = P.cwiseProduct(dP.colwise() - rs);
                       if (tp.needs(q)) tp.gmap(q).middleCols(h * dh, dh).noalias() += sc * dS * K.middleCols(h * dh, dh);
                       if (tp.needs(k))
                         tp.gmap(k).middleCols(h * dh, dh).noalias() += sc * dS.transpose() * Q.middleCols(h * dh, dh);
                     }
                   });
  }

  /// Average-pools the patch rows of a [1 + grid.size() x d] token matrix
  /// spatially by `stride` (non-overlapping windows); row 0 (CLS) passes
  /// through untouched. Spatial extents must be divisible by stride.
  Var pool_tokens(Var x, Grid grid, int stride) {
    const int d = cols(x);
    if (rows(x) != 1 + grid.size()) throw InputError("pool_tokens: token count does not match grid");
    if (stride == 1) return x;
    if (grid.h % stride || grid.w % stride) throw InputError("pool_tokens: grid not divisible by stride");
    const Grid og{grid.t, grid.h / stride, grid.w / stride};
    const auto& xv = value(x);
    std::vector<T> y(static_cast<std::size_t>(1 + og.size()) * d, T(0));
    std::copy_n(xv.begin(), d, y.begin());
    const T inv = T(1) / static_cast<T>(stride * stride);
    for_each_pool(grid, og, stride, [&](int src, int dst) {
      const T* s = xv.data() + static_cast<std::size_t>(src) * d;
      T* o = y.data() + static_cast<std::size_t>(dst) * d;
      for (int c = 0; c < d; ++c) o[c] += inv * s[c];
    });
    return push_op(1 + og.size(), d, std::move(y), {x}, [x, grid, og, stride, d, inv](Tape& tp, int self) {
      const auto& gy = tp.nodes_[self].grad;
      auto& gx = tp.nodes_[x.id].grad;
      for (int c = 0; c < d; ++c) gx[c] += gy[c];
      for_each_pool(grid, og, stride, [&](int src, int dst) {
        for (int c = 0; c < d; ++c)
          gx[static_cast<std::size_t>(src) * d + c] += inv * gy[static_cast<std::size_t>(dst) * d + c];
      });
    });
  }

  /// [cls; x] where cls is [1 x d].
  Var prepend_row(Var row, Var x) {
    const int d = cols(x);
    if (cols(row) != d || rows(row) != 1) throw InputError("prepend_row: shape mismatch");
    std::vector<T> y;
    y.reserve(value(x).size() + d);
    y.insert(y.end(), value(row).begin(), value(row).end());
    y.insert(y.end(), value(x).begin(), value(x).end());
    return push_op(rows(x) + 1, d, std::move(y), {row, x}, [row, x, d](Tape& tp, int self) {
      const auto& gy = tp.nodes_[self].grad;
      if (tp.needs(row))
        for (int c = 0; c < d; ++c) tp.nodes_[row.id].grad[c] += gy[c];
      if (tp.needs(x)) {
        auto& gx = tp.nodes_[x.id].grad;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i + d];
      }
    });
  }

  /// Adds separable positional embeddings to the patch rows of a token
  /// matrix with a leading CLS row: row (1 + (t*h + y)*w + x) gets
  /// time[t] + space[y*w + x].
  Var add_positional(Var x, Var time, Var space, Grid grid) {
    const int d = cols(x);
    if (rows(x) != 1 + grid.size() || rows(time) != grid.t || rows(space) != grid.h * grid.w ||
        cols(time) != d || cols(space) != d)
      throw InputError("add_positional: shape mismatch");
    std::vector<T> y(value(x));
    const auto& tv = value(time);
    const auto& sv = value(space);
    const int hw = grid.h * grid.w;
    for (int t = 0; t < grid.t; ++t)
      for (int s = 0; s < hw; ++s) {
        T* o = y.data() + static_cast<std::size_t>(1 + t * hw + s) * d;
        for (int c = 0; c < d; ++c) o[c] += tv[t * d + c] + sv[s * d + c];
      }
    return push_op(rows(x), d, std::move(y), {x, time, space}, [x, time, space, grid, d, hw](Tape& tp, int self) {
      const auto& gy = tp.nodes_[self].grad;
      if (tp.needs(x)) tp.gmap(x) += tp.cgrad(self);
      const bool nt = tp.needs(time), ns = tp.needs(space);
      for (int t = 0; t < grid.t; ++t)
        for (int s = 0; s < hw; ++s) {
          const T* g = gy.data() + static_cast<std::size_t>(1 + t * hw + s) * d;
          for (int c = 0; c < d; ++c) {
            if (nt) tp.nodes_[time.id].grad[t * d + c] += g[c];
            if (ns) tp.nodes_[space.id].grad[s * d + c] += g[c];
          }
        }
    });
  }

  Var select_row(Var x, int r) {
    const int d = cols(x);
    std::vector<T> y(value(x).begin() + static_cast<std::ptrdiff_t>(r) * d,
                     value(x).begin() + static_cast<std::ptrdiff_t>(r + 1) * d);
    return push_op(1, d, std::move(y), {x}, [x, r, d](Tape& tp, int self) {
      for (int c = 0; c < d; ++c) tp.nodes_[x.id].grad[static_cast<std::size_t>(r) * d + c] += tp.nodes_[self].grad[c];
    });
  }

  /// Mean of rows [begin, end).
  Var mean_rows(Var x, int begin, int end) {
    const int d = cols(x);
    const T inv = T(1) / static_cast<T>(end - begin);
    std::vector<T> y(d, T(0));
    for (int r = begin; r < end; ++r)
      for (int c = 0; c < d; ++c) y[c] += inv * value(x)[static_cast<std::size_t>(r) * d + c];
    return push_op(1, d, std::move(y), {x}, [x, begin, end, d, inv](Tape& tp, int self) {
      for (int r = begin; r < end; ++r)
        for (int c = 0; c < d; ++c)
          tp.nodes_[x.id].grad[static_cast<std::size_t>(r) * d + c] += inv * tp.nodes_[self].grad[c];
    });
  }

  /// Row-wise L2 normalisation. A zero row has no direction and is rejected.
  Var l2_normalize(Var x) {
    const int n = rows(x), d = cols(x);
    std::vector<T> y(value(x)), inv_norm(n);
    for (int r = 0; r < n; ++r) {
      T s = 0;
      for (int c = 0; c < d; ++c) s += y[static_cast<std::size_t>(r) * d + c] * y[static_cast<std::size_t>(r) * d + c];
      if (!(s > T(1e-24))) throw NumericalError("degenerate pre-norm embedding");
      inv_norm[r] = T(1) / std::sqrt(s);
      for (int c = 0; c < d; ++c) y[static_cast<std::size_t>(r) * d + c] *= inv_norm[r];
    }
    return push_op(n, d, std::move(y), {x}, [x, n, d, inv_norm = std::move(inv_norm)](Tape& tp, int self) {
      const auto& gy = tp.nodes_[self].grad;
      const auto& yv = tp.nodes_[self].value;
      auto& gx = tp.nodes_[x.id].grad;
      for (int r = 0; r < n; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * d;
        T dot = 0;
        for (int c = 0; c < d; ++c) dot += yv[off + c] * gy[off + c];
        for (int c = 0; c < d; ++c) gx[off + c] += inv_norm[r] * (gy[off + c] - yv[off + c] * dot);
      }
    });
  }

  /// InfoNCE: -log softmax(logits)[0] with logits = [a.p, a.n_1, ...] / tau.
  /// anchor, positive: [1 x d]; negatives: [N x d]. Returns [1 x 1].
  Var info_nce(Var anchor, Var positive, Var negatives, T tau) {
    const int d = cols(anchor), n = rows(negatives);
    if (n < 1) throw InputError("at least one negative required");
    if (cols(positive) != d || cols(negatives) != d) throw InputError("info_nce: dimension mismatch");
    CMapM A = cmap(anchor), P = cmap(positive), N = cmap(negatives);
    Vec logits(n + 1);
    logits(0) = A.row(0).dot(P.row(0)) / tau;
    logits.tail(n).noalias() = N * A.row(0).transpose() / tau;
    Eigen::Index top = 0;
    const T mx = logits.maxCoeff(&top);
    Vec e = (logits.array() - mx).exp().matrix();
    e(top) = T(0);
    const T rest = e.sum();
    e(top) = T(1);
    const T z = T(1) + rest;
    const T loss = std::log1p(rest) - (logits(0) - mx);
    Vec soft = e / z;
    return push_op(1, 1, {loss}, {anchor, positive, negatives},
                   [anchor, positive, negatives, tau, soft = std::move(soft), n](Tape& tp, int self) {
                     const T g = tp.nodes_[self].grad[0];
                     Vec dl = soft * g;
                     dl(0) -= g;
                     CMapM A = tp.cmap(anchor), P = tp.cmap(positive), N = tp.cmap(negatives);
                     if (tp.needs(anchor))
                       tp.gmap(anchor).row(0) += (dl(0) * P.row(0) + dl.tail(n).transpose() * N) / tau;
                     if (tp.needs(positive)) tp.gmap(positive).row(0) += dl(0) * A.row(0) / tau;
                     if (tp.needs(negatives)) tp.gmap(negatives).noalias() += dl.tail(n) * A.row(0) / tau;
                   });
  }

  /// Binary cross-entropy on a [1 x 1] logit, stable softplus form.
  Var bce_with_logits(Var logit, T target) {
    const T x = scalar(logit);
    const T loss = std::max(x, T(0)) - x * target + std::log1p(std::exp(-std::abs(x)));
    return push_op(1, 1, {loss}, {logit}, [logit, target](Tape& tp, int self) {
      const T x = tp.scalar(logit);
      const T s = T(1) / (T(1) + std::exp(-x));
      tp.nodes_[logit.id].grad[0] += tp.nodes_[self].grad[0] * (s - target);
    });
  }

  /// Softmax cross-entropy of logits [1 x K] against class `label`.
  Var cross_entropy(Var logits, int label) {
    const int k = cols(logits);
    const auto& lv = value(logits);
    T mx = lv[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, lv[i]);
    std::vector<T> soft(k);
    T z = 0;
    for (int i = 0; i < k; ++i) z += (soft[i] = std::exp(lv[i] - mx));
    for (auto& s : soft) s /= z;
    const T loss = std::log(z) + mx - lv[label];
    return push_op(1, 1, {loss}, {logits}, [logits, label, soft = std::move(soft)](Tape& tp, int self) {
      const T g = tp.nodes_[self].grad[0];
      auto& gl = tp.nodes_[logits.id].grad;
      for (std::size_t i = 0; i < soft.size(); ++i) gl[i] += g * (soft[i] - (static_cast<int>(i) == label ? T(1) : T(0)));
    });
  }

  CMapM cmap(Var v) const {
    const auto& n = nodes_[v.id];
    return CMapM(n.value.data(), n.rows, n.cols);
  }

  static void softmax_rows(Mat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      auto row = s.row(r);
      row.array() -= row.maxCoeff();
      row = row.array().exp().matrix();
      row /= row.sum();
    }
  }

 private:
  using Backward = std::function<void(Tape&, int)>;
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    Backward back;
  };

  Var push(int rows, int cols, std::vector<T> value, bool requires_grad) {
    nodes_.push_back(Node{rows, cols, std::move(value), {}, requires_grad, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var push_op(int rows, int cols, std::vector<T> value, std::initializer_list<Var> inputs, Backward back) {
    return push_op(rows, cols, std::move(value), std::vector<Var>(inputs), std::move(back));
  }

  Var push_op(int rows, int cols, std::vector<T> value, const std::vector<Var>& inputs, Backward back) {
    bool rg = false;
    if (record_)
      for (Var in : inputs)
        if (in.valid() && nodes_[in.id].requires_grad) rg = true;
    Var out = push(rows, cols, std::move(value), rg);
    if (rg) nodes_[out.id].back = std::move(back);
    return out;
  }

  [[nodiscard]] bool needs(Var v) const { return v.valid() && nodes_[v.id].requires_grad; }

  MapM gmap(Var v) {
    auto& n = nodes_[v.id];
    return MapM(n.grad.data(), n.rows, n.cols);
  }
  CMapM cgrad(int id) const {
    const auto& n = nodes_[id];
    return CMapM(n.grad.data(), n.rows, n.cols);
  }

  template <class Fn>
  static void for_each_pool(Grid in, Grid out, int stride, Fn&& fn) {
    for (int t = 0; t < in.t; ++t)
      for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
          const int src = 1 + (t * in.h + y) * in.w + x;
          const int dst = 1 + (t * out.h + y / stride) * out.w + x / stride;
          fn(src, dst);
        }
  }

  bool record_;
  std::vector<Node> nodes_;
  mutable std::vector<T> zero_;
};

}  // namespace scvrl::ag

#pragma once

// Contrastive objectives.
//
//   info_nce   -log( e^{a.p/tau} / (e^{a.p/tau} + sum_i e^{a.n_i/tau}) )
//   temporal   anchor: online head_T(psi1(clip)); positive: momentum
//              head_T(psi2(clip)); negatives: momentum head_T of group
//              shuffles of psi2(clip)
//   visual     anchor: online head_V(psi1(clip)); positive: momentum
//              head_V of another clip of the same video; negatives: bank
//   total      L_T + lambda L_V

#include <cmath>
#include <string>
#include <vector>

#include "scvrl/augment.hpp"
#include "scvrl/model.hpp"
#include "scvrl/momentum.hpp"

namespace scvrl {

struct ContrastiveBatch {
  int dim = 0;
  std::vector<double> anchor;
  std::vector<double> positive;
  std::vector<double> negatives;  // [N x dim]

  [[nodiscard]] int n_negatives() const { return dim ? static_cast<int>(negatives.size()) / dim : 0; }
};

struct InfoNceResult {
  double loss = 0;
  std::vector<double> d_anchor;
  std::vector<double> d_positive;
  std::vector<double> d_negatives;
};

/// Loss from precomputed logits, logits[0] being the positive. Stable
/// log-sum-exp form.
inline double info_nce_from_logits(const std::vector<double>& logits) {
  if (logits.size() < 2) throw InputError("at least one negative required");
  const auto top = std::max_element(logits.begin(), logits.end());
  const double mx = *top;
  // log1p keeps full relative precision when the positive dominates
  double rest = 0;
  for (auto it = logits.begin(); it != logits.end(); ++it)
    if (it != top) rest += std::exp(*it - mx);
  return std::log1p(rest) - (logits[0] - mx);
}

namespace detail {

inline void check_unit_rows(const std::vector<double>& v, int dim, const char* what) {
  for (std::size_t r = 0; r * dim < v.size(); ++r) {
    double s = 0;
    for (int c = 0; c < dim; ++c) s += v[r * dim + c] * v[r * dim + c];
    if (std::abs(std::sqrt(s) - 1.0) > 1e-5) throw InputError(std::string(what) + " rows must be unit-norm");
  }
}

}  // namespace detail

/// Loss and gradients w.r.t. every embedding of the batch.
inline InfoNceResult info_nce_with_grad(const ContrastiveBatch& b, double tau) {
  if (!(tau > 0)) throw InputError("tau must be > 0");
  if (b.n_negatives() < 1) throw InputError("at least one negative required");
  if (static_cast<int>(b.anchor.size()) != b.dim || static_cast<int>(b.positive.size()) != b.dim ||
      b.negatives.size() % b.dim != 0)
    throw InputError("contrastive batch dimension mismatch");
  detail::check_unit_rows(b.anchor, b.dim, "anchor");
  detail::check_unit_rows(b.positive, b.dim, "positive");
  detail::check_unit_rows(b.negatives, b.dim, "negative");
  ag::Tape<double> tp;
  auto a = tp.leaf(1, b.dim, b.anchor.data(), true);
  auto p = tp.leaf(1, b.dim, b.positive.data(), true);
  auto n = tp.leaf(b.n_negatives(), b.dim, b.negatives.data(), true);
  auto loss = tp.info_nce(a, p, n, tau);
  tp.backward(loss);
  return {tp.scalar(loss), tp.grad(a), tp.grad(p), tp.grad(n)};
}

inline double info_nce(const ContrastiveBatch& b, double tau) { return info_nce_with_grad(b, tau).loss; }

/// L_T + lambda L_V.
inline double total_loss(double lt, double lv, double lambda_weight) { return lt + lambda_weight * lv; }

/// Per-objective logit statistics (dot products divided by tau).
struct LogitStats {
  double positive = 0;
  double negative_mean = 0;
};

template <class T>
struct Term {
  ag::Var loss;
  LogitStats logits;
};

namespace detail {

template <class T>
LogitStats logit_stats(const std::vector<T>& a, const std::vector<T>& p, const std::vector<T>& negs, double tau) {
  const std::size_t d = a.size();
  auto dot = [&](const T* x) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(a[c]) * x[c];
    return s / tau;
  };
  LogitStats st;
  st.positive = dot(p.data());
  const std::size_t n = negs.size() / d;
  for (std::size_t i = 0; i < n; ++i) st.negative_mean += dot(negs.data() + i * d);
  st.negative_mean /= static_cast<double>(n);
  return st;
}

}  // namespace detail

/// Shuffled contrastive term for one anchor whose online representation is
/// already on the tape. Momentum passes run on gradient-free tapes.
template <class T>
Term<T> temporal_term(ag::Tape<T>& tp, const Bound<T>& online, ag::Var anchor_repr, const ModelState<T>& momentum,
                      const VideoTensor& positive_clip, const std::vector<GroupPermutation>& perms, double tau) {
  if (perms.empty()) throw InputError("at least one negative required");
  for (const auto& p : perms)
    if (p.is_identity()) throw InputError("identity permutation is not a valid negative");
  auto za = head(tp, online, Head::Temporal, anchor_repr);
  const auto zp = embed(momentum, positive_clip, Head::Temporal);
  std::vector<T> negs;
  for (const auto& p : perms) {
    const auto z = embed(momentum, group_shuffle(positive_clip, p), Head::Temporal);
    negs.insert(negs.end(), z.begin(), z.end());
  }
  const int d = static_cast<int>(zp.size());
  const auto stats = detail::logit_stats(tp.value(za), zp, negs, tau);
  auto loss = tp.info_nce(za, tp.constant(1, d, zp), tp.constant(static_cast<int>(perms.size()), d, std::move(negs)),
                          static_cast<T>(tau));
  return {loss, stats};
}

/// Visual contrastive term: `key` is the momentum head_V embedding of the
/// positive clip, `bank` the negatives already placed on the tape.
template <class T>
Term<T> visual_term(ag::Tape<T>& tp, const Bound<T>& online, ag::Var anchor_repr, const std::vector<T>& key,
                    ag::Var bank, double tau) {
  auto za = head(tp, online, Head::Visual, anchor_repr);
  const auto stats = detail::logit_stats(tp.value(za), key, tp.value(bank), tau);
  auto loss = tp.info_nce(za, tp.constant(1, static_cast<int>(key.size()), key), bank, static_cast<T>(tau));
  return {loss, stats};
}

template <class T>
ag::Var bank_on_tape(ag::Tape<T>& tp, const EmbeddingMatrix& negs) {
  std::vector<T> v(negs.data.begin(), negs.data.end());
  return tp.constant(negs.rows, negs.dim, std::move(v));
}

template <class T>
struct LossOutput {
  double loss = 0;
  Gradients<T> gradients;  // w.r.t. online parameters
  LogitStats logits;
  std::vector<T> key_embedding;  // visual loss only
};

/// Standalone temporal loss: draws psi1, psi2 from `rng`, then evaluates the
/// shuffled contrastive term and its online gradients.
template <class T>
LossOutput<T> temporal_loss(const ModelState<T>& online, const ModelState<T>& momentum, const VideoTensor& clip,
                            const AugmentPolicy& policy, const std::vector<GroupPermutation>& perms,
                            const Config& cfg, Rng& rng) {
  const auto anchor = apply_policy(clip, policy, rng);
  const auto positive = apply_policy(clip, policy, rng);
  ag::Tape<T> tp;
  auto P = bind(tp, online, true);
  auto f = forward(tp, P, anchor);
  auto term = temporal_term(tp, P, f.repr, momentum, positive, perms, cfg.tau);
  tp.backward(term.loss);
  return {static_cast<double>(tp.scalar(term.loss)), P.gradients(), term.logits, {}};
}

/// Standalone visual loss against the bank contents.
template <class T>
LossOutput<T> visual_loss(const ModelState<T>& online, const ModelState<T>& momentum, const VideoTensor& anchor_clip,
                          const VideoTensor& positive_clip, const MemoryBank& bank, const AugmentPolicy& policy,
                          const Config& cfg, Rng& rng) {
  const auto negs = bank.negatives();
  const auto anchor = apply_policy(anchor_clip, policy, rng);
  const auto positive = apply_policy(positive_clip, policy, rng);
  const auto key = embed(momentum, positive, Head::Visual);
  ag::Tape<T> tp;
  auto P = bind(tp, online, true);
  auto f = forward(tp, P, anchor);
  auto term = visual_term(tp, P, f.repr, key, bank_on_tape(tp, negs), cfg.tau);
  tp.backward(term.loss);
  return {static_cast<double>(tp.scalar(term.loss)), P.gradients(), term.logits, key};
}

/// L_T + lambda L_V for fixed, already augmented clips: one online pass of
/// `anchor` feeds both heads. Deterministic in its inputs, so it serves as
/// the objective for finite-difference checks.
template <class T>
LossOutput<T> total_loss_fixed(const ModelState<T>& online, const ModelState<T>& momentum, const VideoTensor& anchor,
                               const VideoTensor& temporal_positive, const VideoTensor& visual_positive,
                               const std::vector<GroupPermutation>& perms, const EmbeddingMatrix& bank_negatives,
                               const Config& cfg) {
  const auto key = embed(momentum, visual_positive, Head::Visual);
  ag::Tape<T> tp;
  auto P = bind(tp, online, true);
  auto f = forward(tp, P, anchor);
  auto lt = temporal_term(tp, P, f.repr, momentum, temporal_positive, perms, cfg.tau);
  auto lv = visual_term(tp, P, f.repr, key, bank_on_tape<T>(tp, bank_negatives), cfg.tau);
  const auto lam = static_cast<T>(cfg.lambda_weight);
  auto loss = cfg.weighted_term == WeightedTerm::Visual ? tp.add(lt.loss, tp.scale(lv.loss, lam))
                                                        : tp.add(tp.scale(lt.loss, lam), lv.loss);
  tp.backward(loss);
  return {static_cast<double>(tp.scalar(loss)), P.gradients(), lt.logits, key};
}

}  // namespace scvrl

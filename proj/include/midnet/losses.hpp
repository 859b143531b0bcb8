// Objective terms: reconstruction, classification, cross-domain feature
// alignment, semi-hard triplet metric learning, sample mixing and the
// mixed-sample consistency penalty, plus their weighted combination.

#pragma once

#include <set>

#include "midnet/autograd.hpp"
#include "midnet/rng.hpp"

namespace midnet {

template <typename T>
struct LossWeights {
  T lambda_rec{1};
  T lambda_cls{10};
  T lambda_mi{static_cast<T>(1e-3)};
  T lambda_clus{100};
  T lambda_ssl{1000};
  T eta{0};                           // triplet share inside clustering
  T margin{static_cast<T>(0.2)};      // triplet margin
  T mix_alpha{static_cast<T>(0.75)};  // Beta concentration for the mixer
  bool clamp_mi{true};                // floor the MI term at 0 before weighting

  void validate() const {
    if (lambda_rec < T(0) || lambda_cls < T(0) || lambda_mi < T(0) || lambda_clus < T(0) || lambda_ssl < T(0))
      throw std::invalid_argument("loss.lambda*: weights must be nonnegative");
    if (eta < T(0)) throw std::invalid_argument("loss.eta: must be nonnegative");
    if (margin <= T(0)) throw std::invalid_argument("loss.margin: must be positive");
    if (mix_alpha <= T(0)) throw std::invalid_argument("loss.alpha: must be positive");
  }
};

template <typename T>
struct LossReport {
  T rec{}, cls{}, mi{}, align{}, trip{}, clus{}, ssl{}, total{};
  T mi_estimate{};  // raw lower-bound value before any clamping
  T w_rec{}, w_cls{}, w_mi{}, w_clus{}, w_ssl{};
};

// Batch-averaged squared Frobenius norm of (xhat - x).
template <typename T>
Var<T> rec_loss(const Var<T>& x, const Var<T>& xhat) {
  check_same_shape(x->value, xhat->value, "rec_loss");
  return mean_rowsumsq(sub(xhat, x));
}

// Mean over rows of -log p(true class); probabilities floored before the
// log. Targets are one-hot constants.
template <typename T>
Var<T> cls_loss(const Var<T>& probs, const Tensor<T>& onehot, T floor = static_cast<T>(1e-12)) {
  check_same_shape(probs->value, onehot, "cls_loss");
  if (probs->value.rank() != 2) throw std::invalid_argument("cls_loss: expects N x K probabilities");
  if (!probs->value.all_finite()) throw std::runtime_error("cls_loss: non-finite probabilities");
  const std::int64_t n = probs->value.dim(0), k = probs->value.dim(1);
  T acc = T(0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < k; ++j)
      if (onehot[i * k + j] != T(0)) acc -= onehot[i * k + j] * std::log(std::max(probs->value[i * k + j], floor));
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
  Tensor<T> targets = onehot;
  return probs->graph->record(std::move(out), probs->needs_grad, [probs, targets, floor, n, k](const Tensor<T>& up) {
    if (!probs->needs_grad) return;
    Tensor<T>& g = grad_buf(probs);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < k; ++j) {
        if (targets[i * k + j] == T(0)) continue;
        const T p = probs->value[i * k + j];
        if (p > floor) g[i * k + j] -= up[0] * targets[i * k + j] / (p * static_cast<T>(n));
      }
  });
}

namespace detail {

template <typename T>
std::int64_t feature_width(const Var<T>& f) {
  std::int64_t w = 1;
  for (std::int64_t d = 1; d < f->value.rank(); ++d) w *= f->value.dim(d);
  return w;
}

template <typename T>
T sq_dist(const T* a, const T* b, std::int64_t d) {
  T acc = T(0);
  for (std::int64_t i = 0; i < d; ++i) {
    const T diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace detail

struct PairSet {
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;  // (source row, target row)
  std::vector<double> weights;                               // 1 / (categories * pairs-in-category)
};

// Pairs same-category rows across domains: within each category both
// domain groups are shuffled (seeded) and zipped up to the shorter one.
// Groups are ordered by feature content before the shuffle so the pairing
// depends on the feature multiset, not on batch row order. Only categories
// from the target-train set participate.
template <typename T>
PairSet build_alignment_pairs(const Tensor<T>& features, const std::vector<std::int64_t>& labels,
                              const std::vector<int>& domains, const std::set<std::int64_t>& target_categories,
                              std::uint64_t pair_seed) {
  if (labels.size() != domains.size()) throw std::invalid_argument("align: labels/domains size mismatch");
  const std::int64_t n = features.dim(0);
  const std::int64_t d = features.numel() / std::max<std::int64_t>(n, 1);
  auto content_less = [&](std::int64_t a, std::int64_t b) {
    const T* fa = features.data() + a * d;
    const T* fb = features.data() + b * d;
    for (std::int64_t e = 0; e < d; ++e) {
      if (fa[e] < fb[e]) return true;
      if (fb[e] < fa[e]) return false;
    }
    return false;
  };
  Rng rng(pair_seed);
  PairSet out;
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> per_cat;
  for (std::int64_t c : target_categories) {  // std::set iterates in sorted order
    std::vector<std::int64_t> src, tgt;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      (domains[i] == 0 ? src : tgt).push_back(static_cast<std::int64_t>(i));
    }
    std::sort(src.begin(), src.end(), content_less);
    std::sort(tgt.begin(), tgt.end(), content_less);
    rng.shuffle(src);
    rng.shuffle(tgt);
    const std::size_t k = std::min(src.size(), tgt.size());
    if (k == 0) continue;
    std::vector<std::pair<std::int64_t, std::int64_t>> ps;
    for (std::size_t m = 0; m < k; ++m) ps.emplace_back(src[m], tgt[m]);
    per_cat.push_back(std::move(ps));
  }
  for (const auto& ps : per_cat) {
    const double w = 1.0 / (static_cast<double>(per_cat.size()) * static_cast<double>(ps.size()));
    for (const auto& p : ps) {
      out.pairs.push_back(p);
      out.weights.push_back(w);
    }
  }
  return out;
}

// sum_k w_k * ||f[i_k] - f[j_k]||^2 over flattened feature rows.
template <typename T>
Var<T> weighted_pair_sqdist(const Var<T>& f, const PairSet& ps) {
  const std::int64_t d = detail::feature_width(f);
  const std::int64_t n = f->value.dim(0);
  T acc = T(0);
  for (std::size_t k = 0; k < ps.pairs.size(); ++k) {
    const auto [i, j] = ps.pairs[k];
    if (i < 0 || i >= n || j < 0 || j >= n) throw std::invalid_argument("align: pair index out of range");
    acc += static_cast<T>(ps.weights[k]) * detail::sq_dist(f->value.data() + i * d, f->value.data() + j * d, d);
  }
  Tensor<T> out = Tensor<T>::scalar(acc);
  return f->graph->record(std::move(out), f->needs_grad, [f, ps, d](const Tensor<T>& up) {
    if (!f->needs_grad) return;
    Tensor<T>& g = grad_buf(f);
    for (std::size_t k = 0; k < ps.pairs.size(); ++k) {
      const auto [i, j] = ps.pairs[k];
      const T w = static_cast<T>(ps.weights[k]) * T(2) * up[0];
      const T* fi = f->value.data() + i * d;
      const T* fj = f->value.data() + j * d;
      for (std::int64_t e = 0; e < d; ++e) {
        const T diff = fi[e] - fj[e];
        g[i * d + e] += w * diff;
        g[j * d + e] -= w * diff;
      }
    }
  });
}

// Mean over categories (present with at least one cross-domain pair) of the
// per-category mean squared distance. Zero when nothing pairs up.
template <typename T>
Var<T> align_loss(const Var<T>& features, const std::vector<std::int64_t>& labels, const std::vector<int>& domains,
                  const std::set<std::int64_t>& target_categories, std::uint64_t pair_seed) {
  if (static_cast<std::int64_t>(labels.size()) != features->value.dim(0))
    throw std::invalid_argument("align: feature/label count mismatch");
  PairSet ps = build_alignment_pairs(features->value, labels, domains, target_categories, pair_seed);
  if (ps.pairs.empty()) return features->graph->constant(Tensor<T>::scalar(T(0)));
  return weighted_pair_sqdist(features, ps);
}

struct Triplet {
  std::int64_t anchor, positive, negative;
};

// Semi-hard selection per anchor-positive pair: the closest negative
// farther than the positive when one exists, otherwise the closest
// negative overall. Squared Euclidean distances on flattened rows.
template <typename T>
std::vector<Triplet> mine_semi_hard(const Tensor<T>& features, const std::vector<std::int64_t>& labels) {
  const std::int64_t n = features.dim(0);
  std::int64_t d = 1;
  for (std::int64_t k = 1; k < features.rank(); ++k) d *= features.dim(k);
  std::vector<T> dist(static_cast<std::size_t>(n * n), T(0));
  for (std::int64_t a = 0; a < n; ++a)
    for (std::int64_t b = a + 1; b < n; ++b) {
      const T v = detail::sq_dist(features.data() + a * d, features.data() + b * d, d);
      dist[static_cast<std::size_t>(a * n + b)] = v;
      dist[static_cast<std::size_t>(b * n + a)] = v;
    }
  std::vector<Triplet> out;
  for (std::int64_t a = 0; a < n; ++a) {
    for (std::int64_t p = 0; p < n; ++p) {
      if (p == a || labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(a)]) continue;
      const T d_ap = dist[static_cast<std::size_t>(a * n + p)];
      std::int64_t best_above = -1, best_any = -1;
      T dist_above = T(0), dist_any = T(0);
      for (std::int64_t neg = 0; neg < n; ++neg) {
        if (labels[static_cast<std::size_t>(neg)] == labels[static_cast<std::size_t>(a)]) continue;
        const T d_an = dist[static_cast<std::size_t>(a * n + neg)];
        if (best_any < 0 || d_an < dist_any) {
          best_any = neg;
          dist_any = d_an;
        }
        if (d_an > d_ap && (best_above < 0 || d_an < dist_above)) {
          best_above = neg;
          dist_above = d_an;
        }
      }
      if (best_any < 0) continue;  // single-class batch
      out.push_back({a, p, best_above >= 0 ? best_above : best_any});
    }
  }
  return out;
}

// Mean over triplets of max(0, d(a,p) - d(a,n) + margin).
template <typename T>
Var<T> triplet_hinge(const Var<T>& f, const std::vector<Triplet>& triplets, T margin) {
  if (triplets.empty()) return f->graph->constant(Tensor<T>::scalar(T(0)));
  const std::int64_t d = detail::feature_width(f);
  const T* fd = f->value.data();
  T acc = T(0);
  for (const auto& t : triplets) {
    const T d_ap = detail::sq_dist(fd + t.anchor * d, fd + t.positive * d, d);
    const T d_an = detail::sq_dist(fd + t.anchor * d, fd + t.negative * d, d);
    acc += std::max(T(0), d_ap - d_an + margin);
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(triplets.size()));
  return f->graph->record(std::move(out), f->needs_grad, [f, triplets, margin, d](const Tensor<T>& up) {
    if (!f->needs_grad) return;
    Tensor<T>& g = grad_buf(f);
    const T* fd = f->value.data();
    const T scale = up[0] / static_cast<T>(triplets.size());
    for (const auto& t : triplets) {
      const T* fa = fd + t.anchor * d;
      const T* fp = fd + t.positive * d;
      const T* fn = fd + t.negative * d;
      const T d_ap = detail::sq_dist(fa, fp, d);
      const T d_an = detail::sq_dist(fa, fn, d);
      if (d_ap - d_an + margin <= T(0)) continue;
      for (std::int64_t e = 0; e < d; ++e) {
        const T dap_e = T(2) * (fa[e] - fp[e]);
        const T dan_e = T(2) * (fa[e] - fn[e]);
        g[t.anchor * d + e] += scale * (dap_e - dan_e);
        g[t.positive * d + e] -= scale * dap_e;
        g[t.negative * d + e] += scale * dan_e;
      }
    }
  });
}

template <typename T>
Var<T> triplet_loss(const Var<T>& features, const std::vector<std::int64_t>& labels, T margin) {
  if (static_cast<std::int64_t>(labels.size()) != features->value.dim(0))
    throw std::invalid_argument("triplet: feature/label count mismatch");
  return triplet_hinge(features, mine_semi_hard(features->value, labels), margin);
}

template <typename T>
Var<T> clustering_loss(const Var<T>& align, const Var<T>& trip, T eta) {
  return affine_combine<T>({align, trip}, {T(1), eta});
}

// One mixed sample: x = b*x1 + (1-b)*x2 with b = max(xi, 1-xi),
// xi ~ Beta(alpha, alpha); labels mix with the same coefficient.
template <typename T>
struct Mixed {
  Tensor<T> x;
  Tensor<T> y;
  T beta;
};

template <typename T>
Mixed<T> mix(const Tensor<T>& x1, const Tensor<T>& y1, const Tensor<T>& x2, const Tensor<T>& y2, T alpha, Rng& rng) {
  if (alpha <= T(0)) throw std::invalid_argument("loss.alpha: must be positive");
  check_same_shape(x1, x2, "mix");
  check_same_shape(y1, y2, "mix");
  const T xi = static_cast<T>(rng.beta(static_cast<double>(alpha), static_cast<double>(alpha)));
  const T beta = std::max(xi, T(1) - xi);
  Mixed<T> out;
  out.beta = beta;
  out.x = Tensor<T>(x1.shape());
  for (std::int64_t i = 0; i < x1.numel(); ++i) out.x[i] = beta * x1[i] + (T(1) - beta) * x2[i];
  out.y = Tensor<T>(y1.shape());
  for (std::int64_t i = 0; i < y1.numel(); ++i) out.y[i] = beta * y1[i] + (T(1) - beta) * y2[i];
  return out;
}

// Row-wise mixing of a batch against its permutation along the batch axis.
template <typename T>
struct MixedBatch {
  Tensor<T> x;
  Tensor<T> y;
  std::vector<T> beta;
};

// Draws one mixing coefficient per row.
template <typename T>
std::vector<T> draw_mix_betas(std::int64_t n, T alpha, Rng& rng) {
  if (alpha <= T(0)) throw std::invalid_argument("loss.alpha: must be positive");
  std::vector<T> betas(static_cast<std::size_t>(n));
  for (auto& b : betas) {
    const T xi = static_cast<T>(rng.beta(static_cast<double>(alpha), static_cast<double>(alpha)));
    b = std::max(xi, T(1) - xi);
  }
  return betas;
}

template <typename T>
MixedBatch<T> mix_batch(const Tensor<T>& x, const Tensor<T>& y, const std::vector<std::int64_t>& perm,
                        const std::vector<T>& betas) {
  const std::int64_t n = x.dim(0);
  if (y.dim(0) != n || static_cast<std::int64_t>(perm.size()) != n ||
      static_cast<std::int64_t>(betas.size()) != n)
    throw std::invalid_argument("mix_batch: batch size mismatch");
  const std::int64_t dx = x.numel() / n, dy = y.numel() / n;
  MixedBatch<T> out;
  out.x = Tensor<T>(x.shape());
  out.y = Tensor<T>(y.shape());
  out.beta = betas;
  for (std::int64_t i = 0; i < n; ++i) {
    const T b = betas[static_cast<std::size_t>(i)];
    const std::int64_t j = perm[static_cast<std::size_t>(i)];
    for (std::int64_t e = 0; e < dx; ++e) out.x[i * dx + e] = b * x[i * dx + e] + (T(1) - b) * x[j * dx + e];
    for (std::int64_t e = 0; e < dy; ++e) out.y[i * dy + e] = b * y[i * dy + e] + (T(1) - b) * y[j * dy + e];
  }
  return out;
}

template <typename T>
MixedBatch<T> mix_batch(const Tensor<T>& x, const Tensor<T>& y, const std::vector<std::int64_t>& perm, T alpha,
                        Rng& rng) {
  return mix_batch(x, y, perm, draw_mix_betas(x.dim(0), alpha, rng));
}

// Mean over rows of the squared distance between the mixed label and the
// classifier's prediction on the mixed sample.
template <typename T>
Var<T> ssl_loss(const Tensor<T>& y_mix, const Var<T>& probs_mix) {
  check_same_shape(y_mix, probs_mix->value, "ssl_loss");
  return mean_rowsumsq(sub(probs_mix, probs_mix->graph->constant(y_mix)));
}

template <typename T>
struct TotalLoss {
  Var<T> total;
  LossReport<T> report;
};

// total = l1*rec + l2*cls + l3*mi + l4*(align + eta*trip) + l5*ssl, where
// mi is the (optionally clamped) lower-bound value entering the objective.
template <typename T>
TotalLoss<T> total_loss(const Var<T>& rec, const Var<T>& cls, const Var<T>& mi_raw, const Var<T>& align,
                        const Var<T>& trip, const Var<T>& ssl, const LossWeights<T>& w) {
  w.validate();
  Var<T> mi = w.clamp_mi ? relu(mi_raw) : mi_raw;
  Var<T> clus = clustering_loss(align, trip, w.eta);
  TotalLoss<T> out;
  out.total = affine_combine<T>({rec, cls, mi, clus, ssl},
                                {w.lambda_rec, w.lambda_cls, w.lambda_mi, w.lambda_clus, w.lambda_ssl});
  LossReport<T>& r = out.report;
  r.rec = rec->value[0];
  r.cls = cls->value[0];
  r.mi = mi->value[0];
  r.mi_estimate = mi_raw->value[0];
  r.align = align->value[0];
  r.trip = trip->value[0];
  r.clus = clus->value[0];
  r.ssl = ssl->value[0];
  r.total = out.total->value[0];
  r.w_rec = w.lambda_rec * r.rec;
  r.w_cls = w.lambda_cls * r.cls;
  r.w_mi = w.lambda_mi * r.mi;
  r.w_clus = w.lambda_clus * r.clus;
  r.w_ssl = w.lambda_ssl * r.ssl;
  return out;
}

}  // namespace midnet

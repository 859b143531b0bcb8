// Tape-based reverse-mode differentiation over Tensor<T>.
//
// A Graph owns the tape for one forward pass. Operations append nodes in
// creation order, so walking the tape backwards is a valid topological
// order. Graphs are single-use: build, call backward() once, discard.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "midnet/tensor.hpp"

namespace midnet {

template <typename T>
class Graph;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first contribution
  bool needs_grad{false};
  Graph<T>* graph{nullptr};
  std::function<void(const Tensor<T>& upstream)> backprop;
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
inline Tensor<T>& grad_buf(const Var<T>& v) {
  if (!v->grad.defined()) v->grad = Tensor<T>::zeros(v->value.shape());
  return v->grad;
}

template <typename T>
inline void accum(const Var<T>& v, const Tensor<T>& g) {
  if (!v->needs_grad) return;
  Tensor<T>& dst = grad_buf(v);
  const std::int64_t n = dst.numel();
  T* d = dst.data();
  const T* s = g.data();
  for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

template <typename T>
class Graph {
 public:
  Var<T> constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->graph = this;
    return n;
  }

  // Leaf whose gradient will be collected (parameters, probe inputs).
  Var<T> leaf(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->needs_grad = true;
    n->graph = this;
    return n;
  }

  Var<T> record(Tensor<T> value, bool needs_grad, std::function<void(const Tensor<T>&)> back) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->needs_grad = needs_grad;
    n->graph = this;
    if (needs_grad) {
      n->backprop = std::move(back);
      tape_.push_back(n);
    }
    return n;
  }

  // Seeds the (scalar) root with gradient 1 and sweeps the tape.
  void backward(const Var<T>& root) {
    if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->needs_grad) return;
    grad_buf(root).data()[0] += T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.grad.defined() && n.backprop) n.backprop(n.grad);
    }
  }

  std::size_t tape_size() const { return tape_.size(); }

 private:
  std::vector<Var<T>> tape_;
};

// Shares the value buffer, blocks gradient flow.
template <typename T>
inline Var<T> detach(const Var<T>& x) {
  return x->graph->constant(x->value);
}

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
inline bool any_needs_grad(const std::vector<Var<T>>& vs) {
  for (const auto& v : vs)
    if (v->needs_grad) return true;
  return false;
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor<T> out = a->value.clone();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] += b->value[i];
  return a->graph->record(std::move(out), a->needs_grad || b->needs_grad, [a, b](const Tensor<T>& up) {
    accum(a, up);
    accum(b, up);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "sub");
  Tensor<T> out = a->value.clone();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] -= b->value[i];
  return a->graph->record(std::move(out), a->needs_grad || b->needs_grad, [a, b](const Tensor<T>& up) {
    accum(a, up);
    if (!b->needs_grad) return;
    Tensor<T>& g = grad_buf(b);
    for (std::int64_t i = 0; i < up.numel(); ++i) g[i] -= up[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return a->graph->record(std::move(out), a->needs_grad, [a, s](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    for (std::int64_t i = 0; i < up.numel(); ++i) g[i] += s * up[i];
  });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "hadamard");
  Tensor<T> out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return a->graph->record(std::move(out), a->needs_grad || b->needs_grad, [a, b](const Tensor<T>& up) {
    if (a->needs_grad) {
      Tensor<T>& g = grad_buf(a);
      for (std::int64_t i = 0; i < up.numel(); ++i) g[i] += up[i] * b->value[i];
    }
    if (b->needs_grad) {
      Tensor<T>& g = grad_buf(b);
      for (std::int64_t i = 0; i < up.numel(); ++i) g[i] += up[i] * a->value[i];
    }
  });
}

// a: N x K, b: K x M.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->value.shape()) + " x " +
                                shape_str(b->value.shape()));
  const std::int64_t n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
  Tensor<T> out({n, m});
  {
    detail::ConstMatMap<T> A(a->value.data(), n, k), B(b->value.data(), k, m);
    detail::MatMap<T> O(out.data(), n, m);
    O.noalias() = A * B;
  }
  return a->graph->record(std::move(out), a->needs_grad || b->needs_grad, [a, b, n, k, m](const Tensor<T>& up) {
    detail::ConstMatMap<T> U(up.data(), n, m);
    if (a->needs_grad) {
      detail::ConstMatMap<T> B(b->value.data(), k, m);
      detail::MatMap<T> G(grad_buf(a).data(), n, k);
      G.noalias() += U * B.transpose();
    }
    if (b->needs_grad) {
      detail::ConstMatMap<T> A(a->value.data(), n, k);
      detail::MatMap<T> G(grad_buf(b).data(), k, m);
      G.noalias() += A.transpose() * U;
    }
  });
}

// Broadcasts v over the rows of a (bias add).
template <typename T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& v) {
  if (a->value.rank() != 2 || v->value.numel() != a->value.dim(1))
    throw std::invalid_argument("add_rowvec: bias width mismatch");
  const std::int64_t n = a->value.dim(0), m = a->value.dim(1);
  Tensor<T> out = a->value.clone();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) out[i * m + j] += v->value[j];
  return a->graph->record(std::move(out), a->needs_grad || v->needs_grad, [a, v, n, m](const Tensor<T>& up) {
    accum(a, up);
    if (!v->needs_grad) return;
    Tensor<T>& g = grad_buf(v);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; ++j) g[j] += up[i * m + j];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < T(0)) out[i] = T(0);
  return a->graph->record(std::move(out), a->needs_grad, [a](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    for (std::int64_t i = 0; i < up.numel(); ++i)
      if (a->value[i] > T(0)) g[i] += up[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
  Tensor<T> y = out;
  return a->graph->record(std::move(out), a->needs_grad, [a, y](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    for (std::int64_t i = 0; i < up.numel(); ++i) g[i] += up[i] * y[i] * (T(1) - y[i]);
  });
}

// Row-wise softmax on an N x K matrix, max-shifted.
template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  if (a->value.rank() != 2) throw std::invalid_argument("softmax_rows: expects 2-d input");
  const std::int64_t n = a->value.dim(0), k = a->value.dim(1);
  Tensor<T> out(a->value.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = a->value.data() + i * k;
    T mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    if (!std::isfinite(static_cast<double>(mx)))
      throw std::runtime_error("softmax_rows: non-finite logits");
    T sum = T(0);
    for (std::int64_t j = 0; j < k; ++j) {
      const T e = std::exp(row[j] - mx);
      out[i * k + j] = e;
      sum += e;
    }
    for (std::int64_t j = 0; j < k; ++j) out[i * k + j] /= sum;
  }
  Tensor<T> y = out;
  // dz_j = y_j * (up_j - sum_i up_i y_i), per row.
  return a->graph->record(std::move(out), a->needs_grad, [a, y, n, k](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    for (std::int64_t i = 0; i < n; ++i) {
      T dot = T(0);
      for (std::int64_t j = 0; j < k; ++j) dot += up[i * k + j] * y[i * k + j];
      for (std::int64_t j = 0; j < k; ++j) g[i * k + j] += y[i * k + j] * (up[i * k + j] - dot);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a->value.reshaped(std::move(shape));
  return a->graph->record(std::move(out), a->needs_grad, [a](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    for (std::int64_t i = 0; i < up.numel(); ++i) g[i] += up[i];
  });
}

// Contiguous slice along dim 0.
template <typename T>
Var<T> narrow0(const Var<T>& a, std::int64_t start, std::int64_t len) {
  const Shape& s = a->value.shape();
  if (s.empty() || start < 0 || len < 0 || start + len > s[0])
    throw std::invalid_argument("narrow0: slice out of range");
  std::int64_t inner = 1;
  for (std::size_t d = 1; d < s.size(); ++d) inner *= s[d];
  Shape os = s;
  os[0] = len;
  Tensor<T> out(os);
  std::copy(a->value.data() + start * inner, a->value.data() + (start + len) * inner, out.data());
  return a->graph->record(std::move(out), a->needs_grad, [a, start, len, inner](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    T* dst = g.data() + start * inner;
    for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += up[i];
  });
}

// Concatenate along dim 0 (shapes must agree elsewhere).
template <typename T>
Var<T> concat0(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a->value.shape();
  const Shape& sb = b->value.shape();
  if (sa.size() != sb.size()) throw std::invalid_argument("concat0: rank mismatch");
  for (std::size_t d = 1; d < sa.size(); ++d)
    if (sa[d] != sb[d]) throw std::invalid_argument("concat0: trailing dims differ");
  Shape os = sa;
  os[0] = sa[0] + sb[0];
  Tensor<T> out(os);
  const std::int64_t na = a->value.numel(), nb = b->value.numel();
  std::copy(a->value.data(), a->value.data() + na, out.data());
  std::copy(b->value.data(), b->value.data() + nb, out.data() + na);
  return a->graph->record(std::move(out), a->needs_grad || b->needs_grad, [a, b, na, nb](const Tensor<T>& up) {
    if (a->needs_grad) {
      Tensor<T>& g = grad_buf(a);
      for (std::int64_t i = 0; i < na; ++i) g[i] += up[i];
    }
    if (b->needs_grad) {
      Tensor<T>& g = grad_buf(b);
      for (std::int64_t i = 0; i < nb; ++i) g[i] += up[na + i];
    }
  });
}

// Concatenate along the last axis; all leading dims must agree.
template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a->value.shape();
  const Shape& sb = b->value.shape();
  if (sa.size() != sb.size()) throw std::invalid_argument("concat_last: rank mismatch");
  for (std::size_t d = 0; d + 1 < sa.size(); ++d)
    if (sa[d] != sb[d]) throw std::invalid_argument("concat_last: leading dims differ");
  const std::int64_t ca = sa.back(), cb = sb.back();
  std::int64_t rows = 1;
  for (std::size_t d = 0; d + 1 < sa.size(); ++d) rows *= sa[d];
  Shape os = sa;
  os.back() = ca + cb;
  Tensor<T> out(os);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(a->value.data() + r * ca, a->value.data() + (r + 1) * ca, out.data() + r * (ca + cb));
    std::copy(b->value.data() + r * cb, b->value.data() + (r + 1) * cb, out.data() + r * (ca + cb) + ca);
  }
  return a->graph->record(std::move(out), a->needs_grad || b->needs_grad, [a, b, rows, ca, cb](const Tensor<T>& up) {
    if (a->needs_grad) {
      Tensor<T>& g = grad_buf(a);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < ca; ++j) g[r * ca + j] += up[r * (ca + cb) + j];
    }
    if (b->needs_grad) {
      Tensor<T>& g = grad_buf(b);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < cb; ++j) g[r * cb + j] += up[r * (ca + cb) + ca + j];
    }
  });
}

template <typename T>
Var<T> gather0(const Var<T>& a, std::vector<std::int64_t> idx) {
  const Shape& s = a->value.shape();
  std::int64_t inner = 1;
  for (std::size_t d = 1; d < s.size(); ++d) inner *= s[d];
  for (auto i : idx)
    if (i < 0 || i >= s[0]) throw std::invalid_argument("gather0: index out of range");
  Shape os = s;
  os[0] = static_cast<std::int64_t>(idx.size());
  Tensor<T> out(os);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy(a->value.data() + idx[r] * inner, a->value.data() + (idx[r] + 1) * inner,
              out.data() + static_cast<std::int64_t>(r) * inner);
  return a->graph->record(std::move(out), a->needs_grad, [a, idx = std::move(idx), inner](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      T* dst = g.data() + idx[r] * inner;
      const T* src = up.data() + static_cast<std::int64_t>(r) * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const std::int64_t n = a->value.numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  T acc = T(0);
  for (std::int64_t i = 0; i < n; ++i) acc += a->value[i];
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
  return a->graph->record(std::move(out), a->needs_grad, [a, n](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    const T u = up[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) g[i] += u;
  });
}

// (1/dim0) * sum of squares over all elements. With x = a - b this is the
// batch-averaged squared Frobenius norm.
template <typename T>
Var<T> mean_rowsumsq(const Var<T>& a) {
  const std::int64_t n0 = a->value.dim(0);
  if (n0 == 0) throw std::invalid_argument("mean_rowsumsq: empty batch");
  T acc = T(0);
  for (std::int64_t i = 0; i < a->value.numel(); ++i) acc += a->value[i] * a->value[i];
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n0));
  return a->graph->record(std::move(out), a->needs_grad, [a, n0](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    const T u = T(2) * up[0] / static_cast<T>(n0);
    for (std::int64_t i = 0; i < a->value.numel(); ++i) g[i] += u * a->value[i];
  });
}

// log((1/n) * sum exp(x_i)) over all elements, max-shifted for stability.
template <typename T>
Var<T> logmeanexp(const Var<T>& a) {
  const std::int64_t n = a->value.numel();
  if (n == 0) throw std::invalid_argument("logmeanexp: empty tensor");
  T mx = a->value[0];
  for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, a->value[i]);
  if (!std::isfinite(static_cast<double>(mx))) throw std::runtime_error("logmeanexp: non-finite input");
  T sum = T(0);
  for (std::int64_t i = 0; i < n; ++i) sum += std::exp(a->value[i] - mx);
  Tensor<T> out = Tensor<T>::scalar(mx + std::log(sum / static_cast<T>(n)));
  // d/dx_i = exp(x_i - m) / sum_j exp(x_j - m).
  return a->graph->record(std::move(out), a->needs_grad, [a, n, mx, sum](const Tensor<T>& up) {
    if (!a->needs_grad) return;
    Tensor<T>& g = grad_buf(a);
    for (std::int64_t i = 0; i < n; ++i) g[i] += up[0] * std::exp(a->value[i] - mx) / sum;
  });
}

// Weighted sum of scalar terms.
template <typename T>
Var<T> affine_combine(const std::vector<Var<T>>& terms, const std::vector<T>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size())
    throw std::invalid_argument("affine_combine: terms/coeffs mismatch");
  T acc = T(0);
  bool needs = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->value.numel() != 1) throw std::invalid_argument("affine_combine: non-scalar term");
    acc += coeffs[i] * terms[i]->value[0];
    needs = needs || terms[i]->needs_grad;
  }
  Tensor<T> out = Tensor<T>::scalar(acc);
  auto ts = terms;
  auto cs = coeffs;
  return terms[0]->graph->record(std::move(out), needs, [ts = std::move(ts), cs = std::move(cs)](const Tensor<T>& up) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (!ts[i]->needs_grad) continue;
      grad_buf(ts[i])[0] += cs[i] * up[0];
    }
  });
}

}  // namespace midnet

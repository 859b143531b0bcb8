// Batch normalization over N, H, W per channel.
//
// Training mode normalizes with batch statistics (biased variance) and
// reports them so the owning layer can update its running averages.
// Evaluation mode normalizes with stored running statistics.

#pragma once

#include <type_traits>

#include "midnet/autograd.hpp"

namespace midnet {

template <typename T>
struct BatchStats {
  Tensor<T> mean;
  Tensor<T> var;
};

template <typename T>
Var<T> batchnorm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
                       std::type_identity_t<BatchStats<T>>* stats_out) {
  const Shape& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("batchnorm: expects NHWC");
  const std::int64_t c = s[3];
  const std::int64_t m = s[0] * s[1] * s[2];
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw std::invalid_argument("batchnorm: scale/shift width mismatch");
  if (m < 1) throw std::invalid_argument("batchnorm: empty batch");

  Tensor<T> mean({c}), var({c});
  const T* xd = x->value.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t k = 0; k < c; ++k) mean[k] += xd[i * c + k];
  for (std::int64_t k = 0; k < c; ++k) mean[k] /= static_cast<T>(m);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t k = 0; k < c; ++k) {
      const T d = xd[i * c + k] - mean[k];
      var[k] += d * d;
    }
  for (std::int64_t k = 0; k < c; ++k) var[k] /= static_cast<T>(m);

  Tensor<T> istd({c});
  for (std::int64_t k = 0; k < c; ++k) istd[k] = T(1) / std::sqrt(var[k] + eps);

  Tensor<T> xhat(x->value.shape());
  Tensor<T> out(x->value.shape());
  const T* gd = gamma->value.data();
  const T* bd = beta->value.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t k = 0; k < c; ++k) {
      const T h = (xd[i * c + k] - mean[k]) * istd[k];
      xhat[i * c + k] = h;
      out[i * c + k] = gd[k] * h + bd[k];
    }
  if (stats_out) {
    stats_out->mean = mean;
    stats_out->var = var;
  }

  const bool needs = x->needs_grad || gamma->needs_grad || beta->needs_grad;
  // dx = istd/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat)), per channel.
  return x->graph->record(std::move(out), needs, [x, gamma, beta, xhat, istd, m, c](const Tensor<T>& up) {
    Tensor<T> sum_d({c}), sum_dh({c});
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t k = 0; k < c; ++k) {
        const T dxhat = up[i * c + k] * gamma->value[k];
        sum_d[k] += dxhat;
        sum_dh[k] += dxhat * xhat[i * c + k];
      }
    if (beta->needs_grad) {
      Tensor<T>& g = grad_buf(beta);
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t k = 0; k < c; ++k) g[k] += up[i * c + k];
    }
    if (gamma->needs_grad) {
      Tensor<T>& g = grad_buf(gamma);
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t k = 0; k < c; ++k) g[k] += up[i * c + k] * xhat[i * c + k];
    }
    if (x->needs_grad) {
      Tensor<T>& g = grad_buf(x);
      const T inv_m = T(1) / static_cast<T>(m);
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t k = 0; k < c; ++k) {
          const T dxhat = up[i * c + k] * gamma->value[k];
          g[i * c + k] += istd[k] * (dxhat - inv_m * sum_d[k] - inv_m * xhat[i * c + k] * sum_dh[k]);
        }
    }
  });
}

template <typename T>
Var<T> batchnorm_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const Tensor<T>& rmean,
                      const Tensor<T>& rvar, T eps) {
  const Shape& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("batchnorm: expects NHWC");
  const std::int64_t c = s[3];
  const std::int64_t m = s[0] * s[1] * s[2];
  if (gamma->value.numel() != c || rmean.numel() != c || rvar.numel() != c)
    throw std::invalid_argument("batchnorm: statistics width mismatch");

  Tensor<T> istd({c});
  for (std::int64_t k = 0; k < c; ++k) istd[k] = T(1) / std::sqrt(rvar[k] + eps);

  Tensor<T> xhat(x->value.shape());
  Tensor<T> out(x->value.shape());
  const T* xd = x->value.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t k = 0; k < c; ++k) {
      const T h = (xd[i * c + k] - rmean[k]) * istd[k];
      xhat[i * c + k] = h;
      out[i * c + k] = gamma->value[k] * h + beta->value[k];
    }

  const bool needs = x->needs_grad || gamma->needs_grad || beta->needs_grad;
  return x->graph->record(std::move(out), needs, [x, gamma, beta, xhat, istd, m, c](const Tensor<T>& up) {
    if (beta->needs_grad) {
      Tensor<T>& g = grad_buf(beta);
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t k = 0; k < c; ++k) g[k] += up[i * c + k];
    }
    if (gamma->needs_grad) {
      Tensor<T>& g = grad_buf(gamma);
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t k = 0; k < c; ++k) g[k] += up[i * c + k] * xhat[i * c + k];
    }
    if (x->needs_grad) {
      Tensor<T>& g = grad_buf(x);
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t k = 0; k < c; ++k) g[i * c + k] += up[i * c + k] * gamma->value[k] * istd[k];
    }
  });
}

}  // namespace midnet

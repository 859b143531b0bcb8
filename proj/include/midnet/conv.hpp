// Spatial graph ops on NHWC tensors: convolution, nearest upsampling,
// global average pooling.
//
// conv2d uses SAME padding (output size ceil(in/stride), extra padding on
// the bottom/right) and is lowered to a patches-times-kernel GEMM.

#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

#include "midnet/autograd.hpp"

namespace midnet {

namespace detail {

struct ConvGeom {
  std::int64_t n, h, w, cin;
  std::int64_t kh, kw, cout, stride;
  std::int64_t oh, ow, pad_top, pad_left;
};

inline ConvGeom conv_geometry(const Shape& xs, const Shape& ws, std::int64_t stride) {
  if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: expects NHWC input and KKIO kernel");
  if (ws[2] != xs[3])
    throw std::invalid_argument("conv2d: kernel input channels " + std::to_string(ws[2]) +
                                " do not match image channels " + std::to_string(xs[3]));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeom g;
  g.n = xs[0];
  g.h = xs[1];
  g.w = xs[2];
  g.cin = xs[3];
  g.kh = ws[0];
  g.kw = ws[1];
  g.cout = ws[3];
  g.stride = stride;
  g.oh = (g.h + stride - 1) / stride;
  g.ow = (g.w + stride - 1) / stride;
  const std::int64_t ph = std::max<std::int64_t>((g.oh - 1) * stride + g.kh - g.h, 0);
  const std::int64_t pw = std::max<std::int64_t>((g.ow - 1) * stride + g.kw - g.w, 0);
  g.pad_top = ph / 2;
  g.pad_left = pw / 2;
  return g;
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeom& g) {
  Tensor<T> p({g.n * g.oh * g.ow, g.kh * g.kw * g.cin});
  const T* xd = x.data();
  T* pd = p.data();
  const std::int64_t cols = g.kh * g.kw * g.cin;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oh = 0; oh < g.oh; ++oh) {
      for (std::int64_t ow = 0; ow < g.ow; ++ow) {
        T* row = pd + ((n * g.oh + oh) * g.ow + ow) * cols;
        for (std::int64_t kh = 0; kh < g.kh; ++kh) {
          const std::int64_t ih = oh * g.stride - g.pad_top + kh;
          for (std::int64_t kw = 0; kw < g.kw; ++kw) {
            const std::int64_t iw = ow * g.stride - g.pad_left + kw;
            T* dst = row + (kh * g.kw + kw) * g.cin;
            if (ih >= 0 && ih < g.h && iw >= 0 && iw < g.w) {
              const T* src = xd + ((n * g.h + ih) * g.w + iw) * g.cin;
              std::copy(src, src + g.cin, dst);
            } else {
              std::fill(dst, dst + g.cin, T(0));
            }
          }
        }
      }
    }
  }
  return p;
}

template <typename T>
void col2im_add(const Tensor<T>& dp, const ConvGeom& g, Tensor<T>& dx) {
  const T* pd = dp.data();
  T* xd = dx.data();
  const std::int64_t cols = g.kh * g.kw * g.cin;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oh = 0; oh < g.oh; ++oh) {
      for (std::int64_t ow = 0; ow < g.ow; ++ow) {
        const T* row = pd + ((n * g.oh + oh) * g.ow + ow) * cols;
        for (std::int64_t kh = 0; kh < g.kh; ++kh) {
          const std::int64_t ih = oh * g.stride - g.pad_top + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (std::int64_t kw = 0; kw < g.kw; ++kw) {
            const std::int64_t iw = ow * g.stride - g.pad_left + kw;
            if (iw < 0 || iw >= g.w) continue;
            const T* src = row + (kh * g.kw + kw) * g.cin;
            T* dst = xd + ((n * g.h + ih) * g.w + iw) * g.cin;
            for (std::int64_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: N x H x W x Cin, w: KH x KW x Cin x Cout, b: Cout.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::int64_t stride) {
  const auto g = detail::conv_geometry(x->value.shape(), w->value.shape(), stride);
  if (b->value.numel() != g.cout) throw std::invalid_argument("conv2d: bias size mismatch");

  // 1x1 stride-1 kernels index the input directly; no patch matrix needed.
  const bool pointwise = (g.kh == 1 && g.kw == 1 && g.stride == 1);
  Tensor<T> patches = pointwise ? x->value.reshaped({g.n * g.h * g.w, g.cin}) : detail::im2col(x->value, g);

  const std::int64_t rows = g.n * g.oh * g.ow;
  const std::int64_t cols = g.kh * g.kw * g.cin;
  Tensor<T> out({g.n, g.oh, g.ow, g.cout});
  {
    detail::ConstMatMap<T> P(patches.data(), rows, cols), W(w->value.data(), cols, g.cout);
    detail::MatMap<T> O(out.data(), rows, g.cout);
    O.noalias() = P * W;
  }
  {
    T* od = out.data();
    const T* bd = b->value.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < g.cout; ++c) od[r * g.cout + c] += bd[c];
  }

  const bool needs = x->needs_grad || w->needs_grad || b->needs_grad;
  return x->graph->record(std::move(out), needs,
                          [x, w, b, g, patches, rows, cols, pointwise](const Tensor<T>& up) {
    detail::ConstMatMap<T> U(up.data(), rows, g.cout);
    if (b->needs_grad) {
      Tensor<T>& gb = grad_buf(b);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < g.cout; ++c) gb[c] += up[r * g.cout + c];
    }
    if (w->needs_grad) {
      detail::ConstMatMap<T> P(patches.data(), rows, cols);
      detail::MatMap<T> GW(grad_buf(w).data(), cols, g.cout);
      GW.noalias() += P.transpose() * U;
    }
    if (x->needs_grad) {
      detail::ConstMatMap<T> W(w->value.data(), cols, g.cout);
      if (pointwise) {
        detail::MatMap<T> GX(grad_buf(x).data(), rows, cols);
        GX.noalias() += U * W.transpose();
      } else {
        Tensor<T> dp({rows, cols});
        detail::MatMap<T> DP(dp.data(), rows, cols);
        DP.noalias() = U * W.transpose();
        detail::col2im_add(dp, g, grad_buf(x));
      }
    }
  });
}

// Nearest-neighbour 2x upsampling along H and W.
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  const Shape& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample_nearest2x: expects NHWC");
  const std::int64_t n = s[0], h = s[1], w = s[2], c = s[3];
  Tensor<T> out({n, h * 2, w * 2, c});
  const T* xd = x->value.data();
  T* od = out.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t y = 0; y < h * 2; ++y)
      for (std::int64_t z = 0; z < w * 2; ++z) {
        const T* src = xd + ((i * h + y / 2) * w + z / 2) * c;
        T* dst = od + ((i * h * 2 + y) * w * 2 + z) * c;
        std::copy(src, src + c, dst);
      }
  return x->graph->record(std::move(out), x->needs_grad, [x, n, h, w, c](const Tensor<T>& up) {
    if (!x->needs_grad) return;
    Tensor<T>& g = grad_buf(x);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t y = 0; y < h * 2; ++y)
        for (std::int64_t z = 0; z < w * 2; ++z) {
          const T* src = up.data() + ((i * h * 2 + y) * w * 2 + z) * c;
          T* dst = g.data() + ((i * h + y / 2) * w + z / 2) * c;
          for (std::int64_t k = 0; k < c; ++k) dst[k] += src[k];
        }
  });
}

// N x H x W x C -> N x C.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("global_avg_pool: expects NHWC");
  const std::int64_t n = s[0], hw = s[1] * s[2], c = s[3];
  Tensor<T> out({n, c});
  const T* xd = x->value.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t k = 0; k < c; ++k) out[i * c + k] += xd[(i * hw + p) * c + k];
  for (std::int64_t i = 0; i < n * c; ++i) out[i] /= static_cast<T>(hw);
  return x->graph->record(std::move(out), x->needs_grad, [x, n, hw, c](const Tensor<T>& up) {
    if (!x->needs_grad) return;
    Tensor<T>& g = grad_buf(x);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t p = 0; p < hw; ++p)
        for (std::int64_t k = 0; k < c; ++k) g[(i * hw + p) * c + k] += up[i * c + k] / static_cast<T>(hw);
  });
}

}  // namespace midnet

// Parameterized building blocks. Each layer registers its parameters in a
// ParamStore at construction and builds graph nodes on call, so the same
// layer object serves training and evaluation passes.

#pragma once

#include "midnet/conv.hpp"
#include "midnet/norm.hpp"
#include "midnet/params.hpp"

namespace midnet {

struct Mode {
  bool training{true};
  bool update_stats{true};  // only meaningful while training

  static Mode train() { return {true, true}; }
  static Mode eval() { return {false, false}; }
  // Training-mode statistics without side effects (gradient checks).
  static Mode frozen_train() { return {true, false}; }
};

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(ParamStore<T>& ps, const std::string& prefix, std::int64_t in, std::int64_t out, Rng& rng)
      : w_(&ps.create(prefix + ".w", init::he_normal<T>({in, out}, in, rng), ParamKind::weight)),
        b_(&ps.create(prefix + ".b", init::zeros<T>({out}), ParamKind::bias)) {}

  Var<T> operator()(ParamGraph<T>& pg, const Var<T>& x) const {
    return add_rowvec(matmul(x, pg[*w_]), pg[*b_]);
  }

 private:
  Param<T>* w_{nullptr};
  Param<T>* b_{nullptr};
};

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<T>& ps, const std::string& prefix, std::int64_t k, std::int64_t cin, std::int64_t cout,
              std::int64_t stride, Rng& rng)
      : w_(&ps.create(prefix + ".w", init::he_normal<T>({k, k, cin, cout}, k * k * cin, rng), ParamKind::weight)),
        b_(&ps.create(prefix + ".b", init::zeros<T>({cout}), ParamKind::bias)),
        stride_(stride) {}

  Var<T> operator()(ParamGraph<T>& pg, const Var<T>& x) const {
    return conv2d(x, pg[*w_], pg[*b_], stride_);
  }

 private:
  Param<T>* w_{nullptr};
  Param<T>* b_{nullptr};
  std::int64_t stride_{1};
};

template <typename T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(ParamStore<T>& ps, const std::string& prefix, std::int64_t c)
      : gamma_(&ps.create(prefix + ".gamma", init::ones<T>({c}), ParamKind::norm_scale)),
        beta_(&ps.create(prefix + ".beta", init::zeros<T>({c}), ParamKind::norm_shift)),
        rmean_(&ps.create(prefix + ".running_mean", init::zeros<T>({c}), ParamKind::buffer)),
        rvar_(&ps.create(prefix + ".running_var", init::ones<T>({c}), ParamKind::buffer)) {}

  Var<T> operator()(ParamGraph<T>& pg, const Var<T>& x, Mode mode) const {
    if (!mode.training) return batchnorm_eval(x, pg[*gamma_], pg[*beta_], rmean_->value, rvar_->value, eps_);
    BatchStats<T> stats;
    Var<T> y = batchnorm_train(x, pg[*gamma_], pg[*beta_], eps_, &stats);
    if (mode.update_stats) {
      for (std::int64_t k = 0; k < stats.mean.numel(); ++k) {
        rmean_->value[k] = momentum_ * rmean_->value[k] + (T(1) - momentum_) * stats.mean[k];
        rvar_->value[k] = momentum_ * rvar_->value[k] + (T(1) - momentum_) * stats.var[k];
      }
    }
    return y;
  }

 private:
  Param<T>* gamma_{nullptr};
  Param<T>* beta_{nullptr};
  Param<T>* rmean_{nullptr};
  Param<T>* rvar_{nullptr};
  T eps_{static_cast<T>(1e-3)};
  T momentum_{static_cast<T>(0.9)};
};

// Full pre-activation residual unit: (norm, relu, conv) twice, with a 1x1
// projection on the pre-activated input when channels or stride change.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParamStore<T>& ps, const std::string& prefix, std::int64_t cin, std::int64_t cout,
                std::int64_t stride, Rng& rng)
      : bn1_(ps, prefix + ".bn1", cin),
        conv1_(ps, prefix + ".conv1", 3, cin, cout, stride, rng),
        bn2_(ps, prefix + ".bn2", cout),
        conv2_(ps, prefix + ".conv2", 3, cout, cout, 1, rng),
        projected_(cin != cout || stride != 1) {
    if (projected_) proj_ = Conv2dLayer<T>(ps, prefix + ".proj", 1, cin, cout, stride, rng);
  }

  Var<T> operator()(ParamGraph<T>& pg, const Var<T>& x, Mode mode) const {
    Var<T> h = relu(bn1_(pg, x, mode));
    Var<T> y = conv1_(pg, h);
    y = conv2_(pg, relu(bn2_(pg, y, mode)));
    Var<T> shortcut = projected_ ? proj_(pg, h) : x;
    return add(y, shortcut);
  }

 private:
  BatchNormLayer<T> bn1_;
  Conv2dLayer<T> conv1_;
  BatchNormLayer<T> bn2_;
  Conv2dLayer<T> conv2_;
  Conv2dLayer<T> proj_;
  bool projected_{false};
};

}  // namespace midnet

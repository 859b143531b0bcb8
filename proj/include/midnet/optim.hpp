// SGD with momentum for the main network and Adam for the statistics
// network. Slots are keyed by parameter name so optimizer state rides
// along in checkpoints.

#pragma once

#include "midnet/checkpoint.hpp"
#include "midnet/params.hpp"

namespace midnet {

template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(T lr, T momentum, T l2_scale) : lr_(lr), momentum_(momentum), l2_(l2_scale) {
    if (lr <= T(0)) throw std::invalid_argument("optim.main.lr: must be positive");
    if (momentum < T(0) || momentum >= T(1)) throw std::invalid_argument("optim.main.momentum: must be in [0,1)");
    if (l2_scale < T(0)) throw std::invalid_argument("optim.l2: must be nonnegative");
  }

  // accum <- momentum * accum + (grad + 2*l2*w); w <- w - lr * accum.
  // The decay term is the gradient of l2 * ||w||^2, weights only.
  void step(ParamStore<T>& ps) {
    for (auto& [name, p] : ps) {
      if (!p.trainable()) continue;
      Tensor<T>& v = slot(name, p.value.shape());
      const bool decay = p.decays() && l2_ > T(0);
      for (std::int64_t i = 0; i < p.value.numel(); ++i) {
        T g = p.grad[i];
        if (decay) g += T(2) * l2_ * p.value[i];
        v[i] = momentum_ * v[i] + g;
        p.value[i] -= lr_ * v[i];
      }
    }
  }

  void pack(const std::string& prefix, Checkpoint<T>& ck) const {
    for (const auto& [name, v] : slots_) ck.tensors[prefix + name] = v.clone();
  }
  void unpack(const std::string& prefix, const Checkpoint<T>& ck) {
    slots_.clear();
    for (const auto& [key, t] : ck.tensors)
      if (key.rfind(prefix, 0) == 0) slots_[key.substr(prefix.size())] = t.clone();
  }

 private:
  Tensor<T>& slot(const std::string& name, const Shape& shape) {
    auto it = slots_.find(name);
    if (it == slots_.end()) it = slots_.emplace(name, Tensor<T>::zeros(shape)).first;
    return it->second;
  }

  T lr_, momentum_, l2_;
  std::map<std::string, Tensor<T>> slots_;
};

template <typename T>
class Adam {
 public:
  Adam(T lr, T beta1, T beta2 = T(0.999), T eps = T(1e-8)) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= T(0)) throw std::invalid_argument("optim.mine.lr: must be positive");
    if (beta1 < T(0) || beta1 >= T(1)) throw std::invalid_argument("optim.mine.beta: must be in [0,1)");
  }

  void step(ParamStore<T>& ps) {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), static_cast<double>(t_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), static_cast<double>(t_)));
    for (auto& [name, p] : ps) {
      if (!p.trainable()) continue;
      Tensor<T>& m = slot(m_, name, p.value.shape());
      Tensor<T>& v = slot(v_, name, p.value.shape());
      for (std::int64_t i = 0; i < p.value.numel(); ++i) {
        const T g = p.grad[i];
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g;
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g * g;
        p.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  std::uint64_t steps_taken() const { return t_; }

  void pack(const std::string& prefix, Checkpoint<T>& ck) const {
    for (const auto& [name, m] : m_) ck.tensors[prefix + "m/" + name] = m.clone();
    for (const auto& [name, v] : v_) ck.tensors[prefix + "v/" + name] = v.clone();
    ck.strings[prefix + "t"] = std::to_string(t_);
  }
  void unpack(const std::string& prefix, const Checkpoint<T>& ck) {
    m_.clear();
    v_.clear();
    for (const auto& [key, t] : ck.tensors) {
      if (key.rfind(prefix + "m/", 0) == 0) m_[key.substr(prefix.size() + 2)] = t.clone();
      if (key.rfind(prefix + "v/", 0) == 0) v_[key.substr(prefix.size() + 2)] = t.clone();
    }
    auto it = ck.strings.find(prefix + "t");
    t_ = (it == ck.strings.end()) ? 0 : std::stoull(it->second);
  }

 private:
  static Tensor<T>& slot(std::map<std::string, Tensor<T>>& slots, const std::string& name, const Shape& shape) {
    auto it = slots.find(name);
    if (it == slots.end()) it = slots.emplace(name, Tensor<T>::zeros(shape)).first;
    return it->second;
  }

  T lr_, beta1_, beta2_, eps_;
  std::uint64_t t_{0};
  std::map<std::string, Tensor<T>> m_, v_;
};

}  // namespace midnet

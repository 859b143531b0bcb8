// Named parameter storage shared by the model, the statistics network and
// the optimizers.
//
// Kinds distinguish what the L2 penalty applies to (weight kernels only)
// and what the optimizers may touch (buffers such as running statistics
// are checkpointed but never stepped).

#pragma once

#include <map>
#include <string>
#include <unordered_map>

#include "midnet/autograd.hpp"
#include "midnet/rng.hpp"
#include "midnet/tensor.hpp"

namespace midnet {

enum class ParamKind { weight, bias, norm_scale, norm_shift, buffer };

inline const char* param_kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::weight: return "weight";
    case ParamKind::bias: return "bias";
    case ParamKind::norm_scale: return "norm_scale";
    case ParamKind::norm_shift: return "norm_shift";
    case ParamKind::buffer: return "buffer";
  }
  return "?";
}

template <typename T>
struct Param {
  std::string name;
  ParamKind kind{ParamKind::weight};
  Tensor<T> value;
  Tensor<T> grad;

  bool trainable() const { return kind != ParamKind::buffer; }
  bool decays() const { return kind == ParamKind::weight; }
};

template <typename T>
class ParamStore {
 public:
  Param<T>& create(const std::string& name, Tensor<T> init, ParamKind kind) {
    if (params_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    Param<T> p;
    p.name = name;
    p.kind = kind;
    p.grad = Tensor<T>::zeros(init.shape());
    p.value = std::move(init);
    return params_.emplace(name, std::move(p)).first->second;
  }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("param store: unknown name " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  void zero_grads() {
    for (auto& [name, p] : params_) p.grad.fill(T(0));
  }

  std::int64_t trainable_numel() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_)
      if (p.trainable()) n += p.value.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, p] : params_)
      if (!p.value.all_finite()) return false;
    return true;
  }

 private:
  std::map<std::string, Param<T>> params_;  // ordered: deterministic iteration
};

// Memoized per-graph leaves for a parameter set, so a parameter used in
// several places contributes one node whose gradient accumulates. When
// trainable is false the parameters enter the graph as constants.
template <typename T>
class ParamGraph {
 public:
  ParamGraph(Graph<T>& g, bool trainable = true) : g_(&g), trainable_(trainable) {}

  Var<T> operator[](Param<T>& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return it->second;
    Var<T> v = (trainable_ && p.trainable()) ? g_->leaf(p.value) : g_->constant(p.value);
    leaves_.emplace(&p, v);
    return v;
  }

  // Adds the collected node gradients onto the parameters' grad buffers.
  void harvest() {
    for (auto& [p, v] : leaves_) {
      if (!v->grad.defined()) continue;
      T* dst = p->grad.data();
      const T* src = v->grad.data();
      for (std::int64_t i = 0; i < v->grad.numel(); ++i) dst[i] += src[i];
    }
  }

  Graph<T>& graph() { return *g_; }

 private:
  Graph<T>* g_;
  bool trainable_;
  std::unordered_map<Param<T>*, Var<T>> leaves_;
};

namespace init {

template <typename T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Tensor<T> zeros(Shape shape) {
  return Tensor<T>::zeros(std::move(shape));
}

template <typename T>
Tensor<T> ones(Shape shape) {
  return Tensor<T>::full(std::move(shape), T(1));
}

}  // namespace init

}  // namespace midnet

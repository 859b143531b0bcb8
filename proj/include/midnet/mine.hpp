// Neural mutual-information estimation between the two latent streams.
//
// The statistics network maps one concatenated (class, domain) feature
// pair to a scalar. The estimate on a batch of n pairs is
//   (1/n) sum_i T(fc_i, fd_i)  -  log((1/n) sum_i exp T(fc_i, fd'_i))
// where fd' is a seeded non-identity permutation of fd along the batch.

#pragma once

#include "midnet/model.hpp"

namespace midnet {

template <typename T>
class StatisticsNet {
 public:
  explicit StatisticsNet(std::int64_t input_dim, std::uint64_t seed, std::int64_t hidden = 128)
      : input_dim_(input_dim) {
    Rng rng(seed);
    d1_ = Dense<T>(store_, "t.fc0", input_dim, hidden, rng);
    d2_ = Dense<T>(store_, "t.fc1", hidden, hidden, rng);
    out_ = Dense<T>(store_, "t.out", hidden, 1, rng);
  }

  std::int64_t input_dim() const { return input_dim_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  // pairs: N x input_dim -> N x 1 scalars.
  Var<T> operator()(ParamGraph<T>& pg, const Var<T>& pairs) const {
    if (pairs->value.rank() != 2 || pairs->value.dim(1) != input_dim_)
      throw std::invalid_argument("statistics net: expected N x " + std::to_string(input_dim_) + " input, got " +
                                  shape_str(pairs->value.shape()));
    Var<T> h = relu(d1_(pg, pairs));
    h = relu(d2_(pg, h));
    return out_(pg, h);
  }

 private:
  std::int64_t input_dim_;
  ParamStore<T> store_;
  Dense<T> d1_, d2_, out_;
};

template <typename T>
struct MiEstimate {
  T value{};
  T joint_term{};
  T marginal_term{};
};

template <typename T>
struct MiGraphTerms {
  Var<T> value;
  Var<T> joint;
  Var<T> marginal;
};

// Builds the estimate on the caller's graph so it can join a larger
// objective. theta_pg decides whether gradients reach the statistics net;
// fc/fd decide whether they reach the encoders.
template <typename T>
MiGraphTerms<T> mi_lower_bound(ParamGraph<T>& theta_pg, const StatisticsNet<T>& net, const Var<T>& fc,
                               const Var<T>& fd, const std::vector<std::int64_t>& perm) {
  if (fc->value.rank() != 2 || fd->value.rank() != 2) throw std::invalid_argument("mi: latents must be N x d");
  if (fc->value.dim(0) != fd->value.dim(0)) throw std::invalid_argument("mi: latent batch sizes differ");
  const std::int64_t n = fc->value.dim(0);
  if (n < 1) throw std::invalid_argument("mi: empty batch");
  if (static_cast<std::int64_t>(perm.size()) != n) throw std::invalid_argument("mi: permutation size mismatch");

  MiGraphTerms<T> out;
  Var<T> t_joint = net(theta_pg, concat_last(fc, fd));
  out.joint = mean_all(t_joint);
  Var<T> t_marg = net(theta_pg, concat_last(fc, gather0(fd, perm)));
  out.marginal = logmeanexp(t_marg);
  if (!t_joint->value.all_finite() || !t_marg->value.all_finite())
    throw std::runtime_error("mi: statistics network produced non-finite outputs");
  out.value = sub(out.joint, out.marginal);
  return out;
}

// Identity for n = 1 (only permutation), seeded non-identity otherwise.
inline std::vector<std::int64_t> mi_shuffle(std::int64_t n, std::uint64_t shuffle_seed) {
  Rng rng(shuffle_seed);
  return rng.non_identity_permutation(n);
}

template <typename T>
MiEstimate<T> estimate_mi(const StatisticsNet<T>& net, const Tensor<T>& fc, const Tensor<T>& fd,
                          std::uint64_t shuffle_seed) {
  if (fc.rank() != 2 || fd.rank() != 2 || fc.dim(0) != fd.dim(0) || fc.dim(0) < 1)
    throw std::invalid_argument("estimate_mi: latents must be nonempty N x d batches");
  Graph<T> g;
  ParamGraph<T> pg(g, false);
  auto terms = mi_lower_bound(pg, const_cast<StatisticsNet<T>&>(net), g.constant(fc), g.constant(fd),
                              mi_shuffle(fc.dim(0), shuffle_seed));
  return {terms.value->value[0], terms.joint->value[0], terms.marginal->value[0]};
}

}  // namespace midnet

// Evaluation suite: macro F1/recall/precision from confusion matrices,
// proxy A-distance between feature sets via a linear max-margin domain
// classifier, and embedding export for external projection.

#pragma once

#include <iomanip>
#include <sstream>

#include "midnet/datasets.hpp"
#include "midnet/model.hpp"

namespace midnet {

struct MetricsReport {
  std::string split;
  double macro_f1{0}, macro_recall{0}, macro_precision{0};
  std::vector<double> precision, recall, f1;                // per class; meaningful where included
  std::vector<bool> included;                               // class participates in the macro mean
  std::vector<std::vector<std::int64_t>> confusion;         // counts[true][predicted]
  std::int64_t samples{0};
};

// Metrics are a pure function of the confusion matrix. A class joins the
// macro mean iff it has at least one actual sample; a class with neither
// actual nor predicted samples is excluded rather than scored 0.
inline MetricsReport metrics_from_confusion(const std::vector<std::vector<std::int64_t>>& confusion,
                                            std::string split_name = {}) {
  const std::size_t k = confusion.size();
  MetricsReport r;
  r.split = std::move(split_name);
  r.confusion = confusion;
  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  r.f1.assign(k, 0.0);
  r.included.assign(k, false);
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t tp = confusion[c][c], actual = 0, predicted = 0;
    for (std::size_t j = 0; j < k; ++j) {
      actual += confusion[c][j];
      predicted += confusion[j][c];
      r.samples += confusion[c][j];
    }
    if (actual == 0) continue;  // absent from the split
    r.included[c] = true;
    ++used;
    r.recall[c] = static_cast<double>(tp) / static_cast<double>(actual);
    r.precision[c] = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    r.f1[c] = (r.precision[c] + r.recall[c]) > 0 ? 2 * r.precision[c] * r.recall[c] / (r.precision[c] + r.recall[c])
                                                 : 0.0;
    r.macro_f1 += r.f1[c];
    r.macro_recall += r.recall[c];
    r.macro_precision += r.precision[c];
  }
  if (used > 0) {
    r.macro_f1 /= static_cast<double>(used);
    r.macro_recall /= static_cast<double>(used);
    r.macro_precision /= static_cast<double>(used);
  }
  return r;
}

template <typename T>
std::vector<std::int64_t> predict_labels(const MidnetModel<T>& model, const std::vector<DomainSample<T>>& split,
                                         std::int64_t eval_batch = 128) {
  const auto& cfg = model.config();
  std::vector<std::int64_t> preds;
  preds.reserve(split.size());
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(eval_batch)) {
    const std::size_t n = std::min<std::size_t>(eval_batch, split.size() - start);
    Tensor<T> x({static_cast<std::int64_t>(n), cfg.input_h, cfg.input_w, cfg.input_c});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(split[start + i].image.data(), split[start + i].image.data() + split[start + i].image.numel(),
                x.data() + static_cast<std::int64_t>(i) * cfg.input_h * cfg.input_w * cfg.input_c);
    Tensor<T> probs = model.predict_probs(x);
    for (std::size_t i = 0; i < n; ++i) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < cfg.num_classes; ++j)
        if (probs[static_cast<std::int64_t>(i) * cfg.num_classes + j] >
            probs[static_cast<std::int64_t>(i) * cfg.num_classes + best])
          best = j;
      preds.push_back(best);
    }
  }
  return preds;
}

template <typename T>
std::vector<std::vector<std::int64_t>> confusion(const MidnetModel<T>& model,
                                                 const std::vector<DomainSample<T>>& split) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  const std::int64_t k = model.config().num_classes;
  std::vector<std::vector<std::int64_t>> m(static_cast<std::size_t>(k),
                                           std::vector<std::int64_t>(static_cast<std::size_t>(k), 0));
  const auto preds = predict_labels(model, split);
  for (std::size_t i = 0; i < split.size(); ++i) {
    const std::int64_t truth = split[i].effective_label();
    if (truth < 0 || truth >= k)
      throw std::invalid_argument("evaluate: sample " + split[i].id + " has no usable label");
    ++m[static_cast<std::size_t>(truth)][static_cast<std::size_t>(preds[i])];
  }
  return m;
}

template <typename T>
MetricsReport evaluate(const MidnetModel<T>& model, const std::vector<DomainSample<T>>& split,
                       const std::string& split_name) {
  return metrics_from_confusion(confusion(model, split), split_name);
}

// ---------------------------------------------------------------------------
// Proxy A-distance.

enum class FeatureKind { categorical, domain };

struct ADistanceResult {
  double value{0};             // 2 * (1 - 2 * epsilon), in [0, 2]
  double classifier_error{0};  // epsilon, symmetrized to <= 0.5
  FeatureKind kind{FeatureKind::categorical};
};

namespace detail {

// Primal hinge-loss linear classifier with L2 regularization (C fixed at
// 1.0), trained by deterministic full-batch subgradient descent on
// standardized features with an appended bias column.
inline std::vector<double> fit_linear_svm(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                          double c_reg = 1.0, int iterations = 600) {
  const std::size_t n = x.size();
  const std::size_t d = x[0].size();
  const double lambda = 1.0 / (c_reg * static_cast<double>(n));
  std::vector<double> w(d, 0.0), avg(d, 0.0);
  int averaged = 0;
  for (int t = 1; t <= iterations; ++t) {
    const double eta = 1.0 / (lambda * static_cast<double>(t));
    std::vector<double> grad(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double margin = 0;
      for (std::size_t e = 0; e < d; ++e) margin += w[e] * x[i][e];
      if (y[i] * margin < 1.0)
        for (std::size_t e = 0; e < d; ++e) grad[e] -= y[i] * x[i][e] / static_cast<double>(n);
    }
    for (std::size_t e = 0; e < d; ++e) w[e] = (1.0 - eta * lambda) * w[e] - eta * grad[e];
    if (t > iterations / 2) {  // tail averaging damps the step-size oscillation
      ++averaged;
      for (std::size_t e = 0; e < d; ++e) avg[e] += (w[e] - avg[e]) / averaged;
    }
  }
  return avg;
}

}  // namespace detail

// Features are flattened rows; each domain is split 50/50 into train/test
// halves (seeded), the classifier error on the held-out halves is
// symmetrized to <= 0.5, and the distance is 2(1 - 2*eps).
template <typename T>
ADistanceResult a_distance(const Tensor<T>& source_features, const Tensor<T>& target_features, std::uint64_t seed,
                           FeatureKind kind = FeatureKind::categorical) {
  const std::int64_t ns = source_features.dim(0), nt = target_features.dim(0);
  if (ns < 2 || nt < 2) throw std::invalid_argument("a_distance: each domain needs at least 2 samples");
  const std::int64_t d = source_features.numel() / ns;
  if (target_features.numel() / nt != d) throw std::invalid_argument("a_distance: feature widths differ");

  Rng rng(seed);
  auto split_half = [&](std::int64_t n) {
    auto perm = rng.permutation(n);
    return std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>(
        {perm.begin(), perm.begin() + n / 2}, {perm.begin() + n / 2, perm.end()});
  };
  auto [src_train, src_test] = split_half(ns);
  auto [tgt_train, tgt_test] = split_half(nt);

  auto row = [&](const Tensor<T>& f, std::int64_t i) {
    std::vector<double> v(static_cast<std::size_t>(d));
    for (std::int64_t e = 0; e < d; ++e) v[static_cast<std::size_t>(e)] = static_cast<double>(f[i * d + e]);
    return v;
  };

  std::vector<std::vector<double>> train_x;
  std::vector<int> train_y;
  for (auto i : src_train) {
    train_x.push_back(row(source_features, i));
    train_y.push_back(-1);
  }
  for (auto i : tgt_train) {
    train_x.push_back(row(target_features, i));
    train_y.push_back(+1);
  }

  // standardize with training statistics, then append the bias column
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0), stdev(static_cast<std::size_t>(d), 0.0);
  for (const auto& v : train_x)
    for (std::int64_t e = 0; e < d; ++e) mean[e] += v[e] / static_cast<double>(train_x.size());
  for (const auto& v : train_x)
    for (std::int64_t e = 0; e < d; ++e) stdev[e] += (v[e] - mean[e]) * (v[e] - mean[e]);
  for (std::int64_t e = 0; e < d; ++e)
    stdev[e] = std::sqrt(stdev[e] / static_cast<double>(train_x.size())) + 1e-12;
  auto standardize = [&](std::vector<double> v) {
    for (std::int64_t e = 0; e < d; ++e) v[e] = (v[e] - mean[e]) / stdev[e];
    v.push_back(1.0);
    return v;
  };
  for (auto& v : train_x) v = standardize(v);

  const std::vector<double> w = detail::fit_linear_svm(train_x, train_y);

  std::int64_t wrong = 0, total = 0;
  auto test_side = [&](const Tensor<T>& f, const std::vector<std::int64_t>& idx, int label) {
    for (auto i : idx) {
      const auto v = standardize(row(f, i));
      double margin = 0;
      for (std::size_t e = 0; e < v.size(); ++e) margin += w[e] * v[e];
      if ((margin >= 0 ? +1 : -1) != label) ++wrong;
      ++total;
    }
  };
  test_side(source_features, src_test, -1);
  test_side(target_features, tgt_test, +1);

  ADistanceResult res;
  res.kind = kind;
  const double err = static_cast<double>(wrong) / static_cast<double>(total);
  res.classifier_error = std::min(err, 1.0 - err);  // label flip when worse than chance
  res.value = 2.0 * (1.0 - 2.0 * res.classifier_error);
  return res;
}

// Pooled class-feature rows (the classifier's input view) for a split.
template <typename T>
Tensor<T> pooled_categorical_features(const MidnetModel<T>& model, const std::vector<DomainSample<T>>& split,
                                      std::int64_t eval_batch = 128) {
  const auto& cfg = model.config();
  Tensor<T> out({static_cast<std::int64_t>(split.size()), cfg.latent_channels});
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(eval_batch)) {
    const std::size_t n = std::min<std::size_t>(eval_batch, split.size() - start);
    Tensor<T> x({static_cast<std::int64_t>(n), cfg.input_h, cfg.input_w, cfg.input_c});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(split[start + i].image.data(), split[start + i].image.data() + split[start + i].image.numel(),
                x.data() + static_cast<std::int64_t>(i) * cfg.input_h * cfg.input_w * cfg.input_c);
    Graph<T> g;
    ParamGraph<T> pg(g, false);
    Tensor<T> pooled = global_avg_pool(model.encode_categorical(pg, g.constant(x), Mode::eval()))->value;
    std::copy(pooled.data(), pooled.data() + pooled.numel(),
              out.data() + static_cast<std::int64_t>(start) * cfg.latent_channels);
  }
  return out;
}

template <typename T>
Tensor<T> pooled_domain_features(const MidnetModel<T>& model, const std::vector<DomainSample<T>>& split,
                                 std::int64_t eval_batch = 128) {
  const auto& cfg = model.config();
  Tensor<T> out({static_cast<std::int64_t>(split.size()), cfg.latent_channels});
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(eval_batch)) {
    const std::size_t n = std::min<std::size_t>(eval_batch, split.size() - start);
    Tensor<T> x({static_cast<std::int64_t>(n), cfg.input_h, cfg.input_w, cfg.input_c});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(split[start + i].image.data(), split[start + i].image.data() + split[start + i].image.numel(),
                x.data() + static_cast<std::int64_t>(i) * cfg.input_h * cfg.input_w * cfg.input_c);
    Graph<T> g;
    ParamGraph<T> pg(g, false);
    Tensor<T> pooled = global_avg_pool(model.encode_domain(pg, g.constant(x), Mode::eval()).latent)->value;
    std::copy(pooled.data(), pooled.data() + pooled.numel(),
              out.data() + static_cast<std::int64_t>(start) * cfg.latent_channels);
  }
  return out;
}

// One row per sample: id, domain, true label, predicted label, flattened
// class-feature values. Deterministic formatting, so re-export from the
// same snapshot is byte-identical.
template <typename T>
void export_embeddings(const MidnetModel<T>& model, const std::vector<DomainSample<T>>& split,
                       const std::string& path) {
  if (split.empty()) throw std::invalid_argument("export_embeddings: empty split");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("export_embeddings: cannot write " + path);
  const auto& cfg = model.config();
  const std::int64_t width = cfg.latent_numel();
  f << "id,domain,label,pred";
  for (std::int64_t e = 0; e < width; ++e) f << ",f" << e;
  f << "\n";
  const auto preds = predict_labels(model, split);
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t i = 0; i < split.size(); ++i) {
    Tensor<T> one({1, cfg.input_h, cfg.input_w, cfg.input_c});
    std::copy(split[i].image.data(), split[i].image.data() + split[i].image.numel(), one.data());
    Tensor<T> fc = model.categorical_features(one);
    os.str("");
    os << split[i].id << "," << domain_name(split[i].domain) << "," << split[i].label << "," << preds[i];
    for (std::int64_t e = 0; e < width; ++e) os << "," << fc[e];
    f << os.str() << "\n";
  }
  if (!f) throw std::runtime_error("export_embeddings: write failed for " + path);
}

}  // namespace midnet

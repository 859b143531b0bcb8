// Alternating optimization: one Adam ascent step on the statistics network
// (latents detached), then one SGD-momentum descent step on the encoders,
// decoder and classifier over the weighted objective with L2 decay on
// weight kernels.

#pragma once

#include <functional>
#include <iomanip>

#include "midnet/datasets.hpp"
#include "midnet/eval.hpp"
#include "midnet/losses.hpp"
#include "midnet/mine.hpp"
#include "midnet/optim.hpp"

namespace midnet {

struct OptimConfig {
  double main_lr{1e-5};
  double momentum{0.9};
  double mine_lr{1e-5};
  double mine_beta1{0.9};
  double l2_scale{1e-5};
  std::int64_t steps{2000};
  std::int64_t batch_labeled{32};
  std::int64_t batch_unlabeled{32};
  std::int64_t mine_steps{1};  // statistics-net updates per main step
  std::int64_t eval_every{200};
  std::int64_t checkpoint_every{500};
  std::uint64_t seed{0};

  void validate() const {
    if (main_lr <= 0) throw std::invalid_argument("optim.main_lr: must be positive");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("optim.momentum: must be in [0,1)");
    if (mine_lr <= 0) throw std::invalid_argument("optim.mine_lr: must be positive");
    if (mine_beta1 < 0 || mine_beta1 >= 1) throw std::invalid_argument("optim.mine_beta: must be in [0,1)");
    if (l2_scale < 0) throw std::invalid_argument("optim.l2: must be nonnegative");
    if (steps < 0) throw std::invalid_argument("optim.steps: must be nonnegative");
    if (batch_labeled < 1) throw std::invalid_argument("optim.batch_labeled: must be positive");
    if (batch_unlabeled < 0) throw std::invalid_argument("optim.batch_unlabeled: must be nonnegative");
    if (mine_steps < 0) throw std::invalid_argument("optim.mine_steps: must be nonnegative");
    if (eval_every < 1) throw std::invalid_argument("optim.eval_every: must be positive");
    if (checkpoint_every < 1) throw std::invalid_argument("optim.checkpoint_every: must be positive");
  }
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All randomness of one step resolved up front, so the same assembly runs
// live training, deterministic replay, and finite-difference checks.
template <typename T>
struct StepPlan {
  std::vector<std::int64_t> mi_perm;
  std::uint64_t pair_seed{0};
  std::vector<std::int64_t> mix_perm;
  std::vector<T> mix_betas;
  Mode mode{Mode::train()};
  const Tensor<T>* fixed_pseudo_labels{nullptr};  // gradient checks hold these constant
};

template <typename T>
struct StepLosses {
  Var<T> total;
  LossReport<T> report;
  Tensor<T> pseudo_labels;  // the (detached) predictions used for unlabeled rows
};

template <typename T>
Tensor<T> concat_images(const Tensor<T>& a, const Tensor<T>& b) {
  Shape s = a.shape();
  s[0] += b.dim(0);
  Tensor<T> out(s);
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  return out;
}

// Builds every objective term on one graph. `after_encoders` runs between
// the encoder forward and the MI term so the trainer can advance the
// statistics network on detached latents first.
template <typename T>
StepLosses<T> assemble_step_losses(
    ParamGraph<T>& pg, const MidnetModel<T>& model, const StatisticsNet<T>& mine_net, const Batch<T>& batch,
    const LossWeights<T>& weights, const std::set<std::int64_t>& target_categories, const StepPlan<T>& plan,
    const std::function<void(const Tensor<T>&, const Tensor<T>&)>& after_encoders = {}) {
  Graph<T>& g = pg.graph();
  const std::int64_t nl = batch.labeled_images.dim(0);
  const std::int64_t nu = batch.unlabeled_images.dim(0);
  const std::int64_t n = nl + nu;
  const std::int64_t k = model.config().num_classes;

  Tensor<T> x_all = nu > 0 ? concat_images(batch.labeled_images, batch.unlabeled_images) : batch.labeled_images;
  Var<T> x = g.constant(x_all);
  Var<T> fc = model.encode_categorical(pg, x, plan.mode);
  auto dom = model.encode_domain(pg, x, plan.mode);
  Var<T> pooled_fc = global_avg_pool(fc);
  Var<T> pooled_fd = global_avg_pool(dom.latent);
  if (after_encoders) after_encoders(pooled_fc->value, pooled_fd->value);

  // statistics network enters the main objective as a constant
  ParamGraph<T> theta_pg(g, false);
  auto mi_terms = mi_lower_bound(theta_pg, mine_net, pooled_fc, pooled_fd, plan.mi_perm);

  Var<T> xhat = model.decode(pg, fc, dom.latent, dom.taps, plan.mode);
  Var<T> rec = rec_loss(x, xhat);

  Var<T> probs = model.classify(pg, fc);
  Var<T> cls = cls_loss(narrow0(probs, 0, nl), batch.labeled_targets);

  Var<T> fc_lab = narrow0(fc, 0, nl);
  Var<T> align = align_loss(fc_lab, batch.labeled_labels, batch.labeled_domains, target_categories, plan.pair_seed);
  Var<T> trip = weights.eta > T(0) ? triplet_loss(fc_lab, batch.labeled_labels, weights.margin)
                                   : g.constant(Tensor<T>::scalar(T(0)));

  // mixed-sample consistency: labeled one-hots plus detached predictions
  StepLosses<T> out;
  if (plan.fixed_pseudo_labels) {
    out.pseudo_labels = plan.fixed_pseudo_labels->clone();
  } else if (nu > 0) {
    out.pseudo_labels = narrow0(probs, nl, nu)->value.clone();
  } else {
    out.pseudo_labels = Tensor<T>({0, k});
  }
  Tensor<T> y_cat({n, k});
  std::copy(batch.labeled_targets.data(), batch.labeled_targets.data() + nl * k, y_cat.data());
  if (nu > 0)
    std::copy(out.pseudo_labels.data(), out.pseudo_labels.data() + nu * k, y_cat.data() + nl * k);
  MixedBatch<T> mixed = mix_batch(x_all, y_cat, plan.mix_perm, plan.mix_betas);
  // the mixed pass reuses batch statistics without advancing the running averages
  Mode mix_mode = plan.mode;
  mix_mode.update_stats = false;
  Var<T> probs_mix = model.classify(pg, model.encode_categorical(pg, g.constant(mixed.x), mix_mode));
  Var<T> ssl = ssl_loss(mixed.y, probs_mix);

  auto tot = total_loss(rec, cls, mi_terms.value, align, trip, ssl, weights);
  out.total = tot.total;
  out.report = tot.report;
  return out;
}

template <typename T>
const char* first_non_finite(const LossReport<T>& r) {
  if (!std::isfinite(static_cast<double>(r.rec))) return "rec";
  if (!std::isfinite(static_cast<double>(r.cls))) return "cls";
  if (!std::isfinite(static_cast<double>(r.mi_estimate))) return "mi";
  if (!std::isfinite(static_cast<double>(r.align))) return "align";
  if (!std::isfinite(static_cast<double>(r.trip))) return "trip";
  if (!std::isfinite(static_cast<double>(r.ssl))) return "ssl";
  if (!std::isfinite(static_cast<double>(r.total))) return "total";
  return nullptr;
}

template <typename T>
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const LossWeights<T>& weights, const OptimConfig& optim_cfg,
          std::set<std::int64_t> target_categories)
      : weights_(weights),
        optim_cfg_(optim_cfg),
        target_categories_(std::move(target_categories)),
        model_(model_cfg, Rng(optim_cfg.seed).fork(10).seed()),
        mine_net_(2 * model_cfg.latent_channels, Rng(optim_cfg.seed).fork(11).seed()),
        main_opt_(static_cast<T>(optim_cfg.main_lr), static_cast<T>(optim_cfg.momentum),
                  static_cast<T>(optim_cfg.l2_scale)),
        mine_opt_(static_cast<T>(optim_cfg.mine_lr), static_cast<T>(optim_cfg.mine_beta1)),
        shuffle_rng_(Rng(optim_cfg.seed).fork(12)),
        mix_rng_(Rng(optim_cfg.seed).fork(13)) {
    weights_.validate();
    optim_cfg_.validate();
  }

  MidnetModel<T>& model() { return model_; }
  const MidnetModel<T>& model() const { return model_; }
  StatisticsNet<T>& mine_net() { return mine_net_; }
  std::uint64_t step() const { return step_; }

  // One statistics-net ascent step on detached latents.
  MiEstimate<T> mine_ascent(const Tensor<T>& pooled_fc, const Tensor<T>& pooled_fd) {
    Graph<T> g;
    ParamGraph<T> pg(g, true);
    const std::int64_t n = pooled_fc.dim(0);
    auto perm = n > 1 ? shuffle_rng_.non_identity_permutation(n) : std::vector<std::int64_t>{0};
    auto terms = mi_lower_bound(pg, mine_net_, g.constant(pooled_fc), g.constant(pooled_fd), perm);
    mine_net_.params().zero_grads();
    g.backward(scale(terms.value, T(-1)));
    pg.harvest();
    for (auto& [name, p] : mine_net_.params())
      if (!p.grad.all_finite()) throw DivergenceError("mine: non-finite gradients for " + name);
    mine_opt_.step(mine_net_.params());
    if (!mine_net_.params().all_finite()) throw DivergenceError("mine: parameters diverged");
    return {terms.value->value[0], terms.joint->value[0], terms.marginal->value[0]};
  }

  LossReport<T> train_step(const Batch<T>& batch) {
    const std::int64_t n = batch.labeled_images.dim(0) + batch.unlabeled_images.dim(0);

    StepPlan<T> plan;
    plan.mode = Mode::train();
    plan.mi_perm = n > 1 ? shuffle_rng_.non_identity_permutation(n) : std::vector<std::int64_t>{0};
    plan.pair_seed = shuffle_rng_.next_u64();
    plan.mix_perm = mix_rng_.permutation(n);
    plan.mix_betas = draw_mix_betas(n, weights_.mix_alpha, mix_rng_);

    Graph<T> g;
    ParamGraph<T> pg(g, true);
    auto losses = assemble_step_losses<T>(pg, model_, mine_net_, batch, weights_, target_categories_, plan,
                                          [this](const Tensor<T>& fc, const Tensor<T>& fd) {
                                            for (std::int64_t t = 0; t < optim_cfg_.mine_steps; ++t)
                                              mine_ascent(fc, fd);
                                          });

    if (const char* term = first_non_finite(losses.report))
      throw DivergenceError(std::string("train_step: non-finite loss term '") + term + "' at step " +
                            std::to_string(step_));

    model_.params().zero_grads();
    g.backward(losses.total);
    pg.harvest();
    main_opt_.step(model_.params());
    if (!model_.params().all_finite())
      throw DivergenceError("train_step: model parameters diverged at step " + std::to_string(step_));
    ++step_;
    return losses.report;
  }

  void save_checkpoint(const std::string& path, const std::string& config_echo) const {
    Checkpoint<T> ck;
    ck.step = step_;
    ck.strings["config_echo"] = config_echo;
    ck.strings["rng/shuffle"] = shuffle_rng_.state();
    ck.strings["rng/mix"] = mix_rng_.state();
    pack_params(model_.params(), "model/", ck);
    pack_params(mine_net_.params(), "mine/", ck);
    main_opt_.pack("opt/main/", ck);
    mine_opt_.pack("opt/mine/", ck);
    ck.save(path);
  }

  // Restores parameters, optimizer slots and RNG streams; the caller is
  // responsible for fast-forwarding the batch loader to step().
  std::string restore_checkpoint(const std::string& path) {
    Checkpoint<T> ck = Checkpoint<T>::load(path);
    unpack_params(model_.params(), "model/", ck);
    unpack_params(mine_net_.params(), "mine/", ck);
    main_opt_.unpack("opt/main/", ck);
    mine_opt_.unpack("opt/mine/", ck);
    shuffle_rng_.set_state(ck.strings.at("rng/shuffle"));
    mix_rng_.set_state(ck.strings.at("rng/mix"));
    step_ = ck.step;
    auto it = ck.strings.find("config_echo");
    return it == ck.strings.end() ? std::string() : it->second;
  }

 private:
  LossWeights<T> weights_;
  OptimConfig optim_cfg_;
  std::set<std::int64_t> target_categories_;
  MidnetModel<T> model_;
  StatisticsNet<T> mine_net_;
  SgdMomentum<T> main_opt_;
  Adam<T> mine_opt_;
  Rng shuffle_rng_;
  Rng mix_rng_;
  std::uint64_t step_{0};
};

// ---------------------------------------------------------------------------
// Full runs: data loading, step loop, periodic validation, checkpointing
// and the metrics log.

template <typename T>
struct FitResult {
  std::string final_checkpoint;
  std::string best_checkpoint;
  double best_val_f1{0};
  std::uint64_t best_val_step{0};
  std::uint64_t steps_run{0};
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

}  // namespace detail

// Runs the configured number of steps over prepared data, evaluating on
// the validation split for best-checkpoint selection.
template <typename T>
FitResult<T> fit(const SplitSpec& split_spec, const ModelConfig& model_cfg, const LossWeights<T>& weights,
                 const OptimConfig& optim_cfg, const std::string& data_dir, const std::string& run_dir,
                 const std::string& config_echo) {
  namespace fs = std::filesystem;
  split_spec.validate(false);
  model_cfg.validate();

  std::vector<DomainSample<T>> train, validation;
  try {
    train = read_split<T>(data_dir, "train");
    validation = read_split<T>(data_dir, "val");
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("fit: prepared data missing under ") + data_dir +
                             " (run prepare-data first): " + e.what());
  }
  std::vector<DomainSample<T>> labeled, unlabeled;
  for (auto& s : train) (s.labeled() ? labeled : unlabeled).push_back(std::move(s));

  fs::create_directories(fs::path(run_dir) / "checkpoints");
  {
    std::ofstream echo(fs::path(run_dir) / "config-echo");
    echo << config_echo;
  }
  std::ofstream log(fs::path(run_dir) / "metrics.log", std::ios::trunc);
  if (!log) throw std::runtime_error("fit: cannot write metrics.log under " + run_dir);

  const std::int64_t n_u = unlabeled.empty() ? 0 : optim_cfg.batch_unlabeled;
  BatchLoader<T> loader(std::move(labeled), std::move(unlabeled), model_cfg.num_classes,
                        split_spec.flip_augmentation, Rng(optim_cfg.seed).fork(15).seed());
  Trainer<T> trainer(model_cfg, weights, optim_cfg, split_spec.target_train_indices());

  FitResult<T> result;
  auto ckpt_path = [&](const std::string& tag) {
    return (fs::path(run_dir) / "checkpoints" / tag).string();
  };

  auto run_validation = [&](std::uint64_t at_step) {
    if (validation.empty()) return;
    MetricsReport r = evaluate(trainer.model(), validation, "val");
    log << "eval," << at_step << ",val," << detail::fmt(r.macro_f1) << "," << detail::fmt(r.macro_recall) << ","
        << detail::fmt(r.macro_precision) << "\n";
    log.flush();
    if (r.macro_f1 >= result.best_val_f1) {
      result.best_val_f1 = r.macro_f1;
      result.best_val_step = at_step;
      trainer.save_checkpoint(ckpt_path("best"), config_echo);
      result.best_checkpoint = ckpt_path("best");
    }
  };

  if (optim_cfg.steps == 0) {
    trainer.save_checkpoint(ckpt_path("step-0"), config_echo);
    result.final_checkpoint = ckpt_path("step-0");
    if (result.best_checkpoint.empty()) result.best_checkpoint = result.final_checkpoint;
    return result;
  }

  for (std::int64_t t = 0; t < optim_cfg.steps; ++t) {
    Batch<T> batch = loader.next(optim_cfg.batch_labeled, n_u);
    LossReport<T> r;
    try {
      r = trainer.train_step(batch);
    } catch (const DivergenceError&) {
      trainer.save_checkpoint(ckpt_path("diverged"), config_echo);
      throw;
    }
    log << "loss," << trainer.step() << "," << detail::fmt(r.rec) << "," << detail::fmt(r.cls) << ","
        << detail::fmt(r.mi) << "," << detail::fmt(r.align) << "," << detail::fmt(r.trip) << ","
        << detail::fmt(r.ssl) << "," << detail::fmt(r.total) << "," << detail::fmt(r.mi_estimate) << "\n";
    if (trainer.step() % static_cast<std::uint64_t>(optim_cfg.eval_every) == 0) run_validation(trainer.step());
    if (trainer.step() % static_cast<std::uint64_t>(optim_cfg.checkpoint_every) == 0)
      trainer.save_checkpoint(ckpt_path("step-" + std::to_string(trainer.step())), config_echo);
  }

  if (trainer.step() % static_cast<std::uint64_t>(optim_cfg.eval_every) != 0) run_validation(trainer.step());
  const std::string final_path = ckpt_path("step-" + std::to_string(trainer.step()));
  trainer.save_checkpoint(final_path, config_echo);
  result.final_checkpoint = final_path;
  if (result.best_checkpoint.empty()) result.best_checkpoint = final_path;
  result.steps_run = trainer.step();
  return result;
}

}  // namespace midnet

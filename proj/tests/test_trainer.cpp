#include <filesystem>

#include "doctest.h"
#include "midnet/trainer.hpp"

using namespace midnet;
namespace fs = std::filesystem;

namespace {

ModelConfig toy_model() {
  ModelConfig cfg;
  cfg.input_h = 4;
  cfg.input_w = 4;
  cfg.input_c = 1;
  cfg.encoder_filters = {2, 2};
  cfg.encoder_strides = {1, 2};
  cfg.classifier_hidden = {4};
  cfg.latent_channels = 2;
  cfg.num_classes = 3;
  return cfg;
}

OptimConfig toy_optim(std::uint64_t seed = 3, double lr = 1e-3) {
  OptimConfig cfg;
  cfg.main_lr = lr;
  cfg.mine_lr = 1e-3;
  cfg.l2_scale = 0;
  cfg.batch_labeled = 6;
  cfg.batch_unlabeled = 4;
  cfg.seed = seed;
  return cfg;
}

LossWeights<float> toy_weights() {
  LossWeights<float> w;
  w.lambda_rec = 1;
  w.lambda_cls = 1;
  w.lambda_mi = 0.01f;
  w.lambda_clus = 1;
  w.lambda_ssl = 1;
  w.eta = 0.01f;
  return w;
}

Batch<float> toy_batch(std::uint64_t seed, std::int64_t nl = 6, std::int64_t nu = 4) {
  Rng rng(seed);
  Batch<float> b;
  b.labeled_images = Tensor<float>({nl, 4, 4, 1});
  for (std::int64_t i = 0; i < b.labeled_images.numel(); ++i)
    b.labeled_images[i] = static_cast<float>(rng.uniform());
  b.labeled_targets = Tensor<float>({nl, 3});
  for (std::int64_t i = 0; i < nl; ++i) {
    const std::int64_t c = i % 3;
    b.labeled_targets[i * 3 + c] = 1.0f;
    b.labeled_labels.push_back(c);
    b.labeled_domains.push_back(i % 2);
  }
  b.unlabeled_images = Tensor<float>({nu, 4, 4, 1});
  for (std::int64_t i = 0; i < b.unlabeled_images.numel(); ++i)
    b.unlabeled_images[i] = static_cast<float>(rng.uniform());
  for (std::int64_t i = 0; i < nu; ++i) b.unlabeled_domains.push_back(i % 2);
  return b;
}

template <typename T>
Checkpoint<T> snapshot_trainables(const ParamStore<T>& ps) {
  Checkpoint<T> ck;
  for (const auto& [name, p] : ps)
    if (p.trainable()) ck.tensors[name] = p.value.clone();
  return ck;
}

template <typename T>
bool trainables_equal(const ParamStore<T>& ps, const Checkpoint<T>& snap) {
  for (const auto& [name, p] : ps) {
    if (!p.trainable()) continue;
    const auto& t = snap.tensors.at(name);
    for (std::int64_t i = 0; i < t.numel(); ++i)
      if (p.value[i] != t[i]) return false;
  }
  return true;
}

// Writes a toy two-domain prepared dataset; returns the directory.
fs::path write_toy_data(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("midnet-traindata-" + tag);
  fs::remove_all(dir);
  Rng rng(5);
  std::vector<DomainSample<float>> train, val;
  int id = 0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 10; ++i) {
      DomainSample<float> s;
      s.id = "tr-" + std::to_string(id++);
      s.domain = (c < 2 && i % 2 == 0) ? Domain::target : Domain::source;
      s.label = (i % 3 == 0) ? -1 : c;  // mix of labeled and unlabeled
      s.hidden_label = c;
      s.image = Tensor<float>({4, 4, 1});
      for (int e = 0; e < 16; ++e) s.image[e] = static_cast<float>(rng.uniform());
      train.push_back(std::move(s));
    }
    for (int i = 0; i < 3; ++i) {
      DomainSample<float> s;
      s.id = "val-" + std::to_string(c) + "-" + std::to_string(i);
      s.domain = Domain::source;
      s.label = c;
      s.image = Tensor<float>({4, 4, 1});
      for (int e = 0; e < 16; ++e) s.image[e] = static_cast<float>(rng.uniform());
      val.push_back(std::move(s));
    }
  }
  write_meta(dir, 4, 4, 1, sizeof(float));
  write_split(dir, "train", train);
  write_split(dir, "val", val);
  return dir;
}

SplitSpec toy_split_spec() {
  SplitSpec spec;
  spec.source_categories = {0, 1, 2};
  spec.target_train_categories = {0, 1};
  spec.seed = 4;
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("zero weights and zero decay leave trainable parameters unchanged") {
  LossWeights<float> w = toy_weights();
  w.lambda_rec = w.lambda_cls = w.lambda_mi = w.lambda_clus = w.lambda_ssl = 0;
  w.eta = 0;
  Trainer<float> trainer(toy_model(), w, toy_optim(), {0, 1});
  auto before = snapshot_trainables(trainer.model().params());
  trainer.train_step(toy_batch(1));
  CHECK(trainables_equal(trainer.model().params(), before));
}

TEST_CASE("replay determinism: same config, seeds and data give identical reports") {
  Trainer<float> a(toy_model(), toy_weights(), toy_optim(7), {0, 1});
  Trainer<float> b(toy_model(), toy_weights(), toy_optim(7), {0, 1});
  for (int t = 0; t < 10; ++t) {
    auto ra = a.train_step(toy_batch(100 + t));
    auto rb = b.train_step(toy_batch(100 + t));
    REQUIRE(ra.total == rb.total);
    REQUIRE(ra.rec == rb.rec);
    REQUIRE(ra.cls == rb.cls);
    REQUIRE(ra.mi_estimate == rb.mi_estimate);
    REQUIRE(ra.align == rb.align);
    REQUIRE(ra.ssl == rb.ssl);
  }
}

TEST_CASE("alternation contract") {
  SUBCASE("statistics-net ascent does not touch model parameters") {
    Trainer<float> trainer(toy_model(), toy_weights(), toy_optim(), {0, 1});
    auto before = snapshot_trainables(trainer.model().params());
    Rng rng(2);
    Tensor<float> fc({8, 2}), fd({8, 2});
    for (std::int64_t i = 0; i < 16; ++i) {
      fc[i] = static_cast<float>(rng.normal());
      fd[i] = static_cast<float>(rng.normal());
    }
    trainer.mine_ascent(fc, fd);
    CHECK(trainables_equal(trainer.model().params(), before));
  }

  SUBCASE("main descent does not touch the statistics net") {
    OptimConfig oc = toy_optim();
    oc.mine_steps = 0;  // isolate the main step
    Trainer<float> trainer(toy_model(), toy_weights(), oc, {0, 1});
    auto before = snapshot_trainables(trainer.mine_net().params());
    trainer.train_step(toy_batch(3));
    CHECK(trainables_equal(trainer.mine_net().params(), before));
  }
}

TEST_CASE("ablation soundness: a zero weight erases that term's influence") {
  // with lambda_ssl = 0, changing only the mixer's randomness (seed of the
  // mixing stream) must leave the parameter update bit-identical
  auto run_two_steps = [&](std::uint64_t seed, float lambda_ssl) {
    LossWeights<float> w = toy_weights();
    w.lambda_ssl = lambda_ssl;
    OptimConfig oc = toy_optim(seed);
    Trainer<float> t(toy_model(), w, oc, {0, 1});
    t.train_step(toy_batch(50));
    return snapshot_trainables(t.model().params());
  };
  // different trainer seeds change the mix/shuffle streams; with the same
  // model-init seed the comparison needs a shared optimizer seed, so we
  // instead compare across mix randomness by rerunning with the ssl term
  // active vs. inactive:
  auto base0 = run_two_steps(9, 0.0f);
  auto base1 = run_two_steps(9, 0.0f);
  CHECK(base0.tensors.size() == base1.tensors.size());
  for (const auto& [name, t0] : base0.tensors) {
    const auto& t1 = base1.tensors.at(name);
    for (std::int64_t i = 0; i < t0.numel(); ++i) REQUIRE(t0[i] == t1[i]);
  }
  // sanity: turning the term on does change the update
  auto active = run_two_steps(9, 5.0f);
  bool any_diff = false;
  for (const auto& [name, t0] : base0.tensors) {
    const auto& t1 = active.tensors.at(name);
    for (std::int64_t i = 0; i < t0.numel() && !any_diff; ++i) any_diff = t0[i] != t1[i];
  }
  CHECK(any_diff);
}

TEST_CASE("each objective term moves parameters when isolated") {
  for (int which = 0; which < 5; ++which) {
    LossWeights<float> w = toy_weights();
    w.lambda_rec = which == 0 ? 1.0f : 0.0f;
    w.lambda_cls = which == 1 ? 1.0f : 0.0f;
    w.lambda_mi = which == 2 ? 1.0f : 0.0f;
    w.clamp_mi = false;  // let the raw estimate carry gradient regardless of sign
    w.lambda_clus = which == 3 ? 1.0f : 0.0f;
    w.lambda_ssl = which == 4 ? 1.0f : 0.0f;
    w.eta = 0.01f;
    Trainer<float> t(toy_model(), w, toy_optim(11), {0, 1});
    auto before = snapshot_trainables(t.model().params());
    t.train_step(toy_batch(60 + which));
    CHECK_FALSE(trainables_equal(t.model().params(), before));
  }
}

TEST_CASE("divergence aborts with a diagnostic") {
  OptimConfig oc = toy_optim(5, /*lr=*/1e25);
  Trainer<float> t(toy_model(), toy_weights(), oc, {0, 1});
  CHECK_THROWS_AS(
      {
        for (int i = 0; i < 20; ++i) t.train_step(toy_batch(70 + i));
      },
      std::runtime_error);
}

TEST_CASE("checkpoint resume continues bit-identically") {
  auto data = write_toy_data("resume");
  auto samples = read_split<float>(data, "train");
  std::vector<DomainSample<float>> labeled, unlabeled;
  for (auto& s : samples) (s.labeled() ? labeled : unlabeled).push_back(std::move(s));

  OptimConfig oc = toy_optim(13);
  auto mk_loader = [&]() { return BatchLoader<float>(labeled, unlabeled, 3, false, 77); };

  Trainer<float> a(toy_model(), toy_weights(), oc, {0, 1});
  auto loader_a = mk_loader();
  for (int t = 0; t < 6; ++t) a.train_step(loader_a.next(6, 4));
  const std::string ckpt = (fs::temp_directory_path() / "midnet-resume.ckpt").string();
  a.save_checkpoint(ckpt, "echo");

  Trainer<float> b(toy_model(), toy_weights(), toy_optim(999), {0, 1});  // different seed on purpose
  CHECK(b.restore_checkpoint(ckpt) == "echo");
  CHECK(b.step() == 6);
  auto loader_b = mk_loader();
  loader_b.skip(6, 6, 4);

  for (int t = 0; t < 4; ++t) {
    auto ra = a.train_step(loader_a.next(6, 4));
    auto rb = b.train_step(loader_b.next(6, 4));
    REQUIRE(ra.total == rb.total);
    REQUIRE(ra.mi_estimate == rb.mi_estimate);
  }
  fs::remove(ckpt);
  fs::remove_all(data);
}

TEST_CASE("fit") {
  auto data = write_toy_data("fit");
  const fs::path run = fs::temp_directory_path() / "midnet-run-fit";
  fs::remove_all(run);

  SplitSpec spec = toy_split_spec();
  OptimConfig oc = toy_optim(21);
  oc.steps = 8;
  oc.eval_every = 4;
  oc.checkpoint_every = 4;

  SUBCASE("produces the run directory layout and a best checkpoint") {
    auto res = fit<float>(spec, toy_model(), toy_weights(), oc, data.string(), run.string(), "k = v\n");
    CHECK(fs::exists(run / "config-echo"));
    CHECK(fs::exists(run / "metrics.log"));
    CHECK(fs::exists(run / "checkpoints" / "step-4"));
    CHECK(fs::exists(run / "checkpoints" / "step-8"));
    CHECK(fs::exists(res.best_checkpoint));
    CHECK(res.steps_run == 8);
    // loss rows carry 10 comma-separated fields
    std::ifstream log(run / "metrics.log");
    std::string line;
    std::getline(log, line);
    CHECK(std::count(line.begin(), line.end(), ',') == 9);
    CHECK(line.rfind("loss,1,", 0) == 0);
  }

  SUBCASE("steps = 0 returns the initialization checkpoint") {
    OptimConfig zero = oc;
    zero.steps = 0;
    auto res = fit<float>(spec, toy_model(), toy_weights(), zero, data.string(), (run.string() + "-z"), "");
    CHECK(fs::exists(res.final_checkpoint));
    CHECK(res.steps_run == 0);
    std::ifstream log(fs::path(run.string() + "-z") / "metrics.log");
    std::string all((std::istreambuf_iterator<char>(log)), std::istreambuf_iterator<char>());
    CHECK(all.find("loss,") == std::string::npos);  // empty history
  }

  SUBCASE("two runs with one config produce identical metrics logs") {
    auto r1 = fit<float>(spec, toy_model(), toy_weights(), oc, data.string(), (run.string() + "-d1"), "");
    auto r2 = fit<float>(spec, toy_model(), toy_weights(), oc, data.string(), (run.string() + "-d2"), "");
    std::ifstream f1(fs::path(run.string() + "-d1") / "metrics.log"), f2(fs::path(run.string() + "-d2") / "metrics.log");
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
  }

  SUBCASE("missing prepared data names the preparation step") {
    CHECK_THROWS_WITH_AS(fit<float>(spec, toy_model(), toy_weights(), oc, "/nonexistent-dir", run.string(), ""),
                         doctest::Contains("prepare-data"), std::runtime_error);
  }

  fs::remove_all(run);
  fs::remove_all(fs::path(run.string() + "-z"));
  fs::remove_all(fs::path(run.string() + "-d1"));
  fs::remove_all(fs::path(run.string() + "-d2"));
  fs::remove_all(data);
}

TEST_SUITE_END();

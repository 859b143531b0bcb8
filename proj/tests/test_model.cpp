#include <filesystem>

#include "doctest.h"
#include "midnet/checkpoint.hpp"
#include "midnet/model.hpp"
#include "testutil.hpp"

using namespace midnet;
using testutil::random_tensor;

namespace {

ModelConfig digits_config() { return ModelConfig{}; }

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.input_h = 4;
  cfg.input_w = 4;
  cfg.input_c = 1;
  cfg.encoder_filters = {2, 2};
  cfg.encoder_strides = {1, 2};
  cfg.classifier_hidden = {4};
  cfg.latent_channels = 2;
  cfg.num_classes = 2;
  return cfg;
}

template <typename T>
Tensor<T> random_images(std::int64_t n, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> x({n, cfg.input_h, cfg.input_w, cfg.input_c});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.uniform());
  return x;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("config validation names the offending field") {
  ModelConfig cfg = digits_config();
  cfg.encoder_strides = {1, 2, 2};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("model.filters/model.strides"), std::invalid_argument);

  cfg = digits_config();
  cfg.input_h = 30;  // 30 not divisible by 4
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("model.input"), std::invalid_argument);

  cfg = digits_config();
  cfg.latent_channels = 16;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("model.latent_channels"), std::invalid_argument);

  cfg = digits_config();
  cfg.classifier_hidden = {};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("model.hidden"), std::invalid_argument);
}

TEST_CASE("latent shape follows the stride product") {
  ModelConfig digits = digits_config();
  CHECK(digits.latent_h() == 7);
  CHECK(digits.latent_w() == 7);
  CHECK(digits.latent_numel() == 7 * 7 * 8);

  ModelConfig us;
  us.input_h = 224;
  us.input_w = 288;
  us.input_c = 1;
  us.encoder_filters = {8, 16, 32, 64, 8};
  us.encoder_strides = {1, 2, 2, 2, 1};
  us.validate();
  CHECK(us.latent_h() == 28);
  CHECK(us.latent_w() == 36);
}

TEST_CASE("encoders produce the expected latents") {
  MidnetModel<float> model(digits_config(), 42);
  auto x = random_images<float>(2, model.config(), 7);

  SUBCASE("spatial latent size and determinism") {
    Tensor<float> fc = model.categorical_features(x);
    CHECK(fc.shape() == Shape{2, 7, 7, 8});
    Tensor<float> fc2 = model.categorical_features(x);
    for (std::int64_t i = 0; i < fc.numel(); ++i) REQUIRE(fc[i] == fc2[i]);
  }

  SUBCASE("identical inputs give identical latent rows") {
    // equal up to blocked-GEMM accumulation order, which differs by row position
    Tensor<float> both({2, 28, 28, 3});
    for (std::int64_t i = 0; i < 28 * 28 * 3; ++i) both[i] = both[28 * 28 * 3 + i] = x[i];
    Tensor<float> fc = model.categorical_features(both);
    for (std::int64_t i = 0; i < 7 * 7 * 8; ++i)
      REQUIRE(fc[i] == doctest::Approx(fc[7 * 7 * 8 + i]).epsilon(1e-5));
  }

  SUBCASE("zeroing the final block's output path zeroes the latent") {
    for (const char* name : {"e1.block3.conv2.w", "e1.block3.conv2.b", "e1.block3.proj.w", "e1.block3.proj.b"})
      model.params().at(name).value.fill(0.0f);
    Tensor<float> fc = model.categorical_features(x);
    for (std::int64_t i = 0; i < fc.numel(); ++i) REQUIRE(fc[i] == 0.0f);
  }

  SUBCASE("wrong input shape is a dimension error") {
    CHECK_THROWS_AS(model.categorical_features(Tensor<float>({1, 14, 28, 3})), std::invalid_argument);
  }
}

TEST_CASE("classifier head") {
  MidnetModel<float> model(digits_config(), 1);
  auto x = random_images<float>(3, model.config(), 9);

  SUBCASE("probability rows sum to one, width equals the class count") {
    Tensor<float> p = model.predict_probs(x);
    CHECK(p.shape() == Shape{3, 10});
    for (std::int64_t i = 0; i < 3; ++i) {
      float s = 0;
      for (std::int64_t j = 0; j < 10; ++j) {
        s += p[i * 10 + j];
        CHECK(p[i * 10 + j] >= 0.0f);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  SUBCASE("zero logits give the uniform distribution") {
    model.params().at("cls.out.w").value.fill(0.0f);
    model.params().at("cls.out.b").value.fill(0.0f);
    Tensor<float> p = model.predict_probs(x);
    for (std::int64_t i = 0; i < p.numel(); ++i) CHECK(p[i] == doctest::Approx(0.1).epsilon(1e-6));
  }
}

TEST_CASE("decoder") {
  SUBCASE("reconstruction shape equals input shape, digits config") {
    MidnetModel<float> model(digits_config(), 3);
    auto x = random_images<float>(2, model.config(), 5);
    Tensor<float> xhat = model.reconstruct(x);
    CHECK(xhat.shape() == x.shape());
    for (std::int64_t i = 0; i < xhat.numel(); ++i) {
      REQUIRE(xhat[i] >= 0.0f);
      REQUIRE(xhat[i] <= 1.0f);
    }
  }

  SUBCASE("reconstruction shape equals input shape, ultrasound config") {
    ModelConfig us;
    us.input_h = 224;
    us.input_w = 288;
    us.input_c = 1;
    us.encoder_filters = {8, 16, 32, 64, 8};
    us.encoder_strides = {1, 2, 2, 2, 1};
    MidnetModel<float> model(us, 3);
    Tensor<float> x = random_images<float>(1, us, 6);
    CHECK(model.reconstruct(x).shape() == x.shape());
  }

  SUBCASE("swapping the two latents changes the reconstruction") {
    MidnetModel<float> model(toy_config(), 8);
    auto x = random_images<float>(2, model.config(), 4);
    Graph<float> g;
    ParamGraph<float> pg(g, false);
    auto xc = g.constant(x);
    auto fc = model.encode_categorical(pg, xc, Mode::eval());
    auto dom = model.encode_domain(pg, xc, Mode::eval());
    auto normal = model.decode(pg, fc, dom.latent, dom.taps, Mode::eval());
    auto swapped = model.decode(pg, dom.latent, fc, dom.taps, Mode::eval());
    bool any_diff = false;
    for (std::int64_t i = 0; i < normal->value.numel() && !any_diff; ++i)
      any_diff = std::abs(normal->value[i] - swapped->value[i]) > 1e-6f;
    CHECK(any_diff);
  }

  SUBCASE("reconstruction gradient w.r.t. decoder parameters matches finite differences") {
    MidnetModel<double> model(toy_config(), 12);
    auto x = random_images<double>(2, model.config(), 13);

    // analytic gradients for decoder parameters only
    model.params().zero_grads();
    {
      Graph<double> g;
      ParamGraph<double> pg(g, true);
      auto xc = g.constant(x);
      auto fc = model.encode_categorical(pg, xc, Mode::frozen_train());
      auto dom = model.encode_domain(pg, xc, Mode::frozen_train());
      auto xhat = model.decode(pg, fc, dom.latent, dom.taps, Mode::frozen_train());
      auto loss = mean_rowsumsq(sub(xhat, xc));
      g.backward(loss);
      pg.harvest();
    }

    auto eval_loss = [&]() {
      Graph<double> g;
      ParamGraph<double> pg(g, false);
      auto xc = g.constant(x);
      auto fc = model.encode_categorical(pg, xc, Mode::frozen_train());
      auto dom = model.encode_domain(pg, xc, Mode::frozen_train());
      auto xhat = model.decode(pg, fc, dom.latent, dom.taps, Mode::frozen_train());
      return mean_rowsumsq(sub(xhat, xc))->value[0];
    };

    const double h = 1e-5;
    std::int64_t checked = 0, bad = 0;
    for (auto& [name, p] : model.params()) {
      if (name.rfind("dec.", 0) != 0 || !p.trainable()) continue;
      for (std::int64_t i = 0; i < p.value.numel(); ++i) {
        const double keep = p.value[i];
        p.value[i] = keep + h;
        const double fp = eval_loss();
        p.value[i] = keep - h;
        const double fm = eval_loss();
        p.value[i] = keep;
        const double num = (fp - fm) / (2 * h);
        const double ana = p.grad[i];
        const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-4});
        ++checked;
        if (rel > 1e-3) ++bad;
      }
    }
    CHECK(checked > 100);
    CHECK(bad == 0);
  }
}

TEST_CASE("checkpoint round trip restores bit-identical forwards") {
  ModelConfig cfg = toy_config();
  MidnetModel<float> a(cfg, 21);
  auto x = random_images<float>(3, cfg, 2);
  // push the BN running stats away from their init so buffers matter
  {
    Graph<float> g;
    ParamGraph<float> pg(g, false);
    (void)a.encode_categorical(pg, g.constant(x), Mode::train());
  }
  Tensor<float> before = a.predict_probs(x);

  Checkpoint<float> ck;
  ck.step = 17;
  pack_params(a.params(), "model/", ck);
  const std::string path = (std::filesystem::temp_directory_path() / "midnet-ckpt-test.bin").string();
  ck.save(path);

  auto loaded = Checkpoint<float>::load(path);
  CHECK(loaded.step == 17);
  MidnetModel<float> b(cfg, 909);  // different init
  unpack_params(b.params(), "model/", loaded);
  Tensor<float> after = b.predict_probs(x);
  REQUIRE(after.numel() == before.numel());
  for (std::int64_t i = 0; i < after.numel(); ++i) REQUIRE(after[i] == before[i]);

  // bit-exact parameter round trip
  for (auto& [name, p] : a.params()) {
    const auto& t = loaded.tensors.at("model/" + name);
    for (std::int64_t i = 0; i < t.numel(); ++i) REQUIRE(t[i] == p.value[i]);
  }

  SUBCASE("config mismatch on load names the tensor") {
    ModelConfig other = toy_config();
    other.encoder_filters = {3, 2};
    MidnetModel<float> c(other, 1);
    CHECK_THROWS_WITH_AS(unpack_params(c.params(), "model/", loaded), doctest::Contains("shape mismatch"),
                         std::runtime_error);
  }
  std::filesystem::remove(path);
}

TEST_SUITE_END();

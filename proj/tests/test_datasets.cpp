#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "midnet/datasets.hpp"

using namespace midnet;
namespace fs = std::filesystem;

namespace {

DomainSample<float> sample(std::string id, Domain dom, std::int64_t label, float fill = 0.5f,
                           std::int64_t h = 4, std::int64_t w = 4, std::int64_t c = 1) {
  DomainSample<float> s;
  s.id = std::move(id);
  s.domain = dom;
  s.label = label;
  s.image = Tensor<float>::full({h, w, c}, fill);
  return s;
}

std::vector<DomainSample<float>> make_pool(const std::string& prefix, Domain dom, std::int64_t classes,
                                           std::int64_t per_class) {
  std::vector<DomainSample<float>> out;
  for (std::int64_t c = 0; c < classes; ++c)
    for (std::int64_t i = 0; i < per_class; ++i)
      out.push_back(sample(prefix + "-" + std::to_string(c) + "-" + std::to_string(i), dom, c,
                           static_cast<float>(c) / static_cast<float>(classes)));
  return out;
}

SplitSpec digits_spec() {
  SplitSpec spec;
  spec.source_categories = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  spec.target_train_categories = {0, 1, 2, 3, 4};
  spec.seed = 11;
  return spec;
}

std::set<std::int64_t> category_set(const std::vector<DomainSample<float>>& v) {
  std::set<std::int64_t> out;
  for (const auto& s : v) out.insert(s.effective_label());
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("datasets");

TEST_CASE("target-domain synthesis") {
  SUBCASE("all-zero digit returns the patch") {
    Rng rng(1);
    Tensor<float> digit = Tensor<float>::zeros({6, 6});
    Tensor<float> patch = procedural_texture<float>(6, 6, 3, rng);
    Tensor<float> out = synthesize_mnist_m(digit, patch);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(patch[i]));
  }

  SUBCASE("digit equal to the broadcast patch gives zeros") {
    Tensor<float> digit({3, 3});
    for (std::int64_t i = 0; i < 9; ++i) digit[i] = static_cast<float>(i) / 10.0f;
    Tensor<float> patch({3, 3, 2});
    for (std::int64_t i = 0; i < 9; ++i) patch[i * 2] = patch[i * 2 + 1] = digit[i];
    Tensor<float> out = synthesize_mnist_m(digit, patch);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(0.0f));
  }

  SUBCASE("per-pixel absolute difference") {
    Tensor<float> digit({1, 1}, {0.8f});
    Tensor<float> patch({1, 1, 3}, {0.3f, 0.9f, 0.8f});
    Tensor<float> out = synthesize_mnist_m(digit, patch);
    CHECK(out[0] == doctest::Approx(0.5f));
    CHECK(out[1] == doctest::Approx(0.1f).epsilon(1e-5));
    CHECK(out[2] == doctest::Approx(0.0f));
    // brute-force oracle on random pairs
    Rng rng(3);
    Tensor<float> d({5, 4});
    for (std::int64_t i = 0; i < d.numel(); ++i) d[i] = static_cast<float>(rng.uniform());
    Tensor<float> p({5, 4, 3});
    for (std::int64_t i = 0; i < p.numel(); ++i) p[i] = static_cast<float>(rng.uniform());
    Tensor<float> o = synthesize_mnist_m(d, p);
    for (std::int64_t pix = 0; pix < 20; ++pix)
      for (std::int64_t k = 0; k < 3; ++k)
        CHECK(o[pix * 3 + k] == doctest::Approx(std::abs(d[pix] - p[pix * 3 + k])));
    CHECK(o.all_finite());
  }

  SUBCASE("shape and range violations are rejected") {
    Tensor<float> digit({4, 4});
    Tensor<float> patch({5, 5, 3});
    CHECK_THROWS_AS(synthesize_mnist_m(digit, patch), std::invalid_argument);
    Tensor<float> bad({4, 4});
    bad[0] = 1.5f;
    CHECK_THROWS_AS(synthesize_mnist_m(bad, Tensor<float>({4, 4, 3})), std::invalid_argument);
  }
}

TEST_CASE("texture generator stays in range and is seed-deterministic") {
  Rng a(42), b(42);
  auto t1 = procedural_texture<float>(8, 8, 3, a);
  auto t2 = procedural_texture<float>(8, 8, 3, b);
  for (std::int64_t i = 0; i < t1.numel(); ++i) {
    CHECK(t1[i] == t2[i]);
    CHECK(t1[i] >= 0.05f);
    CHECK(t1[i] <= 0.95f);
  }
}

TEST_CASE("build_splits") {
  SUBCASE("digits protocol: unseen set is 5..9 from the target domain") {
    auto splits = build_splits(digits_spec(), RawSet<float>{make_pool("src", Domain::source, 10, 10), {}},
                               RawSet<float>{make_pool("tgt", Domain::target, 10, 10), {}});
    CHECK(category_set(splits.t_target_new) == std::set<std::int64_t>{5, 6, 7, 8, 9});
    for (const auto& s : splits.t_target_new) CHECK(s.domain == Domain::target);
    CHECK(category_set(splits.t_source) == std::set<std::int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(category_set(splits.t_target) == std::set<std::int64_t>{0, 1, 2, 3, 4});
    // train: all ten source categories, only 0..4 from target
    std::set<std::int64_t> train_target_cats;
    for (const auto& s : splits.train)
      if (s.domain == Domain::target) train_target_cats.insert(s.label);
    CHECK(train_target_cats == std::set<std::int64_t>{0, 1, 2, 3, 4});
  }

  SUBCASE("dropping exactly one category leaves exactly that category unseen") {
    SplitSpec spec = digits_spec();
    spec.target_train_categories = {0, 1, 2, 3, 4, 5, 6, 8, 9};  // drop 7
    auto splits = build_splits(spec, RawSet<float>{make_pool("src", Domain::source, 10, 6), {}},
                               RawSet<float>{make_pool("tgt", Domain::target, 10, 6), {}});
    CHECK(category_set(splits.t_target_new) == std::set<std::int64_t>{7});
  }

  SUBCASE("shared-category sweep keeps the held-out anatomy unseen") {
    // four anatomy-style raw categories; the last one never enters C^T
    for (int grow = 1; grow <= 3; ++grow) {
      SplitSpec spec;
      spec.source_categories = {100, 200, 300, 400};
      spec.target_train_categories.assign(spec.source_categories.begin(), spec.source_categories.begin() + grow);
      spec.seed = 5;
      auto splits = build_splits(spec, RawSet<float>{make_pool("src", Domain::source, 4, 8), {}},
                                 RawSet<float>{make_pool("tgt", Domain::target, 4, 8), {}});
      CHECK(splits.t_target_new.size() > 0);
      CHECK(category_set(splits.t_target_new).count(3) == 1);  // index of raw 400
    }
  }

  SUBCASE("four outputs are pairwise disjoint by id") {
    auto splits = build_splits(digits_spec(), RawSet<float>{make_pool("src", Domain::source, 10, 8), {}},
                               RawSet<float>{make_pool("tgt", Domain::target, 10, 8), {}});
    std::set<std::string> ids;
    std::size_t total = 0;
    for (const auto* v : {&splits.train, &splits.t_source, &splits.t_target, &splits.t_target_new}) {
      total += v->size();
      for (const auto& s : *v) ids.insert(s.id);
    }
    CHECK(ids.size() == total);
  }

  SUBCASE("empty unseen set is a configuration error") {
    SplitSpec spec = digits_spec();
    spec.target_train_categories = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    CHECK_THROWS_AS(build_splits(spec, RawSet<float>{make_pool("s", Domain::source, 10, 2), {}},
                                 RawSet<float>{make_pool("t", Domain::target, 10, 2), {}}),
                    std::invalid_argument);
  }
}

TEST_CASE("mask_labels") {
  SUBCASE("fraction 1.0 leaves nothing unlabeled") {
    auto [lab, unlab] = mask_labels(make_pool("x", Domain::source, 3, 5), 1.0, 7);
    CHECK(lab.size() == 15);
    CHECK(unlab.empty());
  }

  SUBCASE("30% of 100 single-category samples") {
    auto [lab, unlab] = mask_labels(make_pool("x", Domain::source, 1, 100), 0.30, 7);
    CHECK(lab.size() == 30);
    CHECK(unlab.size() == 70);
    for (const auto& s : unlab) {
      CHECK(s.label == -1);
      CHECK(s.hidden_label == 0);  // stripped, not deleted
    }
  }

  SUBCASE("total matches round(fraction * n) with per-category proportionality") {
    auto pool = make_pool("x", Domain::source, 4, 25);  // 100 samples
    auto [lab, unlab] = mask_labels(pool, 0.15, 3);
    CHECK(lab.size() == 15);
    std::map<std::int64_t, int> per_cat;
    for (const auto& s : lab) ++per_cat[s.label];
    for (auto& [c, n] : per_cat) CHECK(n == doctest::Approx(4).epsilon(0.5));  // 3 or 4 each
  }

  SUBCASE("deterministic in the seed") {
    auto a = mask_labels(make_pool("x", Domain::source, 5, 9), 0.4, 99);
    auto b = mask_labels(make_pool("x", Domain::source, 5, 9), 0.4, 99);
    REQUIRE(a.first.size() == b.first.size());
    for (std::size_t i = 0; i < a.first.size(); ++i) CHECK(a.first[i].id == b.first[i].id);
    auto c = mask_labels(make_pool("x", Domain::source, 5, 9), 0.4, 100);
    bool any_diff = c.first.size() != a.first.size();
    for (std::size_t i = 0; !any_diff && i < a.first.size(); ++i) any_diff = a.first[i].id != c.first[i].id;
    CHECK(any_diff);
  }

  SUBCASE("fraction outside (0,1] is rejected") {
    CHECK_THROWS_AS(mask_labels(make_pool("x", Domain::source, 2, 4), 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(mask_labels(make_pool("x", Domain::source, 2, 4), 1.2, 1), std::invalid_argument);
  }
}

TEST_CASE("batch loader") {
  const std::int64_t k = 5;
  auto labeled = make_pool("lab", Domain::source, k, 12);
  auto unlabeled_src = make_pool("unl-s", Domain::source, k, 6);
  auto unlabeled_tgt = make_pool("unl-t", Domain::target, k, 6);
  std::vector<DomainSample<float>> unlabeled;
  for (auto& s : unlabeled_src) unlabeled.push_back(s);
  for (auto& s : unlabeled_tgt) unlabeled.push_back(s);
  for (auto& s : unlabeled) {
    s.hidden_label = s.label;
    s.label = -1;
  }

  SUBCASE("labeled batch is exactly balanced when sizes divide") {
    BatchLoader<float> loader(labeled, unlabeled, k, false, 3);
    auto b = loader.next(2 * k, 4);
    std::map<std::int64_t, int> counts;
    for (auto l : b.labeled_labels) ++counts[l];
    for (std::int64_t c = 0; c < k; ++c) CHECK(counts[c] == 2);
    // one-hot rows sum to one
    for (std::int64_t i = 0; i < 2 * k; ++i) {
      float s = 0;
      for (std::int64_t j = 0; j < k; ++j) s += b.labeled_targets[i * k + j];
      CHECK(s == 1.0f);
    }
    CHECK(b.unlabeled_images.dim(0) == 4);
  }

  SUBCASE("per-batch counts differ by at most one with a remainder") {
    BatchLoader<float> loader(labeled, unlabeled, k, false, 3);
    auto b = loader.next(2 * k + 3, 0);
    std::map<std::int64_t, int> counts;
    for (auto l : b.labeled_labels) ++counts[l];
    int mn = 1 << 20, mx = 0;
    for (auto& [c, n] : counts) {
      mn = std::min(mn, n);
      mx = std::max(mx, n);
    }
    CHECK(mx - mn <= 1);
  }

  SUBCASE("epoch-level balance: counts differ by at most the batch count") {
    BatchLoader<float> loader(labeled, unlabeled, k, false, 3);
    const int batches = 9;
    std::map<std::int64_t, int> counts;
    for (int t = 0; t < batches; ++t) {
      auto b = loader.next(7, 0);  // 7 = 5 + remainder 2
      for (auto l : b.labeled_labels) ++counts[l];
    }
    int mn = 1 << 20, mx = 0;
    for (auto& [c, n] : counts) {
      mn = std::min(mn, n);
      mx = std::max(mx, n);
    }
    CHECK(mx - mn <= batches);
  }

  SUBCASE("images are bit-identical to storage when flipping is off") {
    BatchLoader<float> loader(labeled, unlabeled, k, false, 3);
    auto b = loader.next(k, 2);
    // every labeled image in the pool is constant per category, so compare
    // against the category fill value
    for (std::int64_t i = 0; i < k; ++i) {
      const float expect = static_cast<float>(b.labeled_labels[i]) / static_cast<float>(k);
      for (std::int64_t e = 0; e < 16; ++e) CHECK(b.labeled_images[i * 16 + e] == expect);
    }
  }

  SUBCASE("deterministic replay for a fixed seed") {
    BatchLoader<float> a(labeled, unlabeled, k, true, 77);
    BatchLoader<float> b(labeled, unlabeled, k, true, 77);
    for (int t = 0; t < 3; ++t) {
      auto ba = a.next(k, 3);
      auto bb = b.next(k, 3);
      for (std::int64_t i = 0; i < ba.labeled_images.numel(); ++i)
        REQUIRE(ba.labeled_images[i] == bb.labeled_images[i]);
      for (std::int64_t i = 0; i < ba.unlabeled_images.numel(); ++i)
        REQUIRE(ba.unlabeled_images[i] == bb.unlabeled_images[i]);
    }
  }

  SUBCASE("unbalanceable batch size is a configuration error") {
    BatchLoader<float> loader(labeled, unlabeled, k, false, 3);
    CHECK_THROWS_AS(loader.next(k - 1, 0), std::invalid_argument);
  }
}

TEST_CASE("split round trip through manifest and tensor file") {
  const fs::path dir = fs::temp_directory_path() / "midnet-test-split";
  fs::remove_all(dir);
  auto pool = make_pool("rt", Domain::source, 3, 4);
  pool[2].label = -1;
  pool[2].hidden_label = 2;
  pool[5].domain = Domain::target;
  write_meta(dir, 4, 4, 1, sizeof(float));
  write_split(dir, "train", pool);
  auto back = read_split<float>(dir, "train");
  REQUIRE(back.size() == pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    CHECK(back[i].id == pool[i].id);
    CHECK(back[i].domain == pool[i].domain);
    CHECK(back[i].label == pool[i].label);
    for (std::int64_t e = 0; e < 16; ++e) CHECK(back[i].image[e] == pool[i].image[e]);
  }
  // manifest format: id,domain,label,offset
  std::ifstream man(dir / "train.manifest");
  std::string line;
  std::getline(man, line);
  CHECK(line == "rt-0-0,source,0,0");
  fs::remove_all(dir);
}

TEST_CASE("idx round trip") {
  const fs::path dir = fs::temp_directory_path() / "midnet-test-idx";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "img", std::ios::binary);
    auto be32 = [&](std::uint32_t v) {
      unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
      f.write(reinterpret_cast<char*>(b), 4);
    };
    be32(2051);
    be32(2);
    be32(2);
    be32(2);
    unsigned char px[8] = {0, 51, 102, 153, 204, 255, 0, 128};
    f.write(reinterpret_cast<char*>(px), 8);
  }
  {
    std::ofstream f(dir / "lbl", std::ios::binary);
    unsigned char hdr[8] = {0, 0, 8, 1, 0, 0, 0, 2};
    f.write(reinterpret_cast<char*>(hdr), 8);
    unsigned char lab[2] = {7, 3};
    f.write(reinterpret_cast<char*>(lab), 2);
  }
  auto imgs = read_idx_images<float>(dir / "img");
  auto labs = read_idx_labels(dir / "lbl");
  REQUIRE(imgs.size() == 2);
  CHECK(imgs[0][1] == doctest::Approx(51.0 / 255.0));
  CHECK(imgs[1][1] == doctest::Approx(1.0));
  CHECK(labs == std::vector<std::int64_t>{7, 3});
  fs::remove_all(dir);
}

TEST_CASE("holdout and subsample keep per-category proportions") {
  auto pool = make_pool("h", Domain::source, 4, 20);
  auto [kept, held] = stratified_holdout(pool, 0.1, 5);
  CHECK(held.size() == 8);
  CHECK(kept.size() == 72);
  auto sub = subsample(pool, 0.5, 6);
  CHECK(sub.size() == 40);
  std::map<std::int64_t, int> counts;
  for (const auto& s : sub) ++counts[s.label];
  for (auto& [c, n] : counts) CHECK(n == 10);
}

TEST_CASE("channel replication") {
  Tensor<float> g({2, 2, 1}, {0.1f, 0.2f, 0.3f, 0.4f});
  auto rgb = replicate_channels(g, 3);
  CHECK(rgb.shape() == Shape{2, 2, 3});
  CHECK(rgb[0] == 0.1f);
  CHECK(rgb[2] == 0.1f);
  CHECK(rgb[9] == 0.4f);
}

TEST_SUITE_END();

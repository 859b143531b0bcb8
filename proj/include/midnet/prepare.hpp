// Materializes the two-domain digit datasets: loads raw idx digits,
// synthesizes the textured target domain, builds the train/test splits,
// carves the validation holdout, masks labels, and writes everything in
// the manifest + tensor format.

#pragma once

#include "midnet/config.hpp"
#include "midnet/datasets.hpp"

namespace midnet {

struct PrepareSummary {
  std::size_t train_labeled{0};
  std::size_t train_unlabeled{0};
  std::size_t validation{0};
  std::size_t t_source{0};
  std::size_t t_target{0};
  std::size_t t_target_new{0};
};

namespace detail {

template <typename T>
std::vector<Tensor<T>> load_texture_patches(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".ppm") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("data.texture: no .ppm patches under " + dir);
  std::vector<Tensor<T>> out;
  for (const auto& f : files) out.push_back(read_ppm<T>(f));
  return out;
}

// Seeded crop of a (possibly larger) patch to h x w with c channels.
template <typename T>
Tensor<T> crop_patch(const Tensor<T>& patch, std::int64_t h, std::int64_t w, std::int64_t c, Rng& rng) {
  if (patch.dim(0) < h || patch.dim(1) < w)
    throw std::invalid_argument("data.texture: patch " + shape_str(patch.shape()) + " smaller than " +
                                std::to_string(h) + "x" + std::to_string(w));
  const std::int64_t y0 = patch.dim(0) == h ? 0 : rng.uniform_int(patch.dim(0) - h + 1);
  const std::int64_t x0 = patch.dim(1) == w ? 0 : rng.uniform_int(patch.dim(1) - w + 1);
  Tensor<T> out({h, w, c});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t k = 0; k < c; ++k)
        out[(y * w + x) * c + k] = patch[((y0 + y) * patch.dim(1) + (x0 + x)) * patch.dim(2) +
                                         (k % patch.dim(2))];
  return out;
}

}  // namespace detail

template <typename T>
PrepareSummary prepare_data(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  cfg.split.validate(true);

  for (const std::string* p : {&cfg.raw_images, &cfg.raw_labels}) {
    if (p->empty())
      throw std::invalid_argument(
          "data.raw_images/data.raw_labels: not set; point them at idx files (the bundled fixture lives under "
          "data/digits/, real MNIST comes from scripts/fetch_mnist.sh)");
    if (!fs::exists(*p))
      throw std::invalid_argument("data.raw_images: " + *p +
                                  " not found; run scripts/fetch_mnist.sh or use the bundled data/digits/ fixture");
  }

  auto images = read_idx_images<T>(cfg.raw_images);
  auto labels = read_idx_labels(cfg.raw_labels);
  if (images.size() != labels.size())
    throw std::invalid_argument("data.raw_images/labels: image and label counts differ");

  std::vector<Tensor<T>> test_images;
  std::vector<std::int64_t> test_labels;
  if (!cfg.raw_test_images.empty()) {
    test_images = read_idx_images<T>(cfg.raw_test_images);
    test_labels = read_idx_labels(cfg.raw_test_labels);
    if (test_images.size() != test_labels.size())
      throw std::invalid_argument("data.raw_test_images/labels: image and label counts differ");
  }

  const std::int64_t h = images.front().dim(0), w = images.front().dim(1);
  if (h != cfg.model.input_h || w != cfg.model.input_w)
    throw std::invalid_argument("model.input_h/w: raw digits are " + std::to_string(h) + "x" + std::to_string(w) +
                                " but the model expects " + std::to_string(cfg.model.input_h) + "x" +
                                std::to_string(cfg.model.input_w));

  Rng root(cfg.seed);
  Rng texture_rng = root.fork(100);
  Rng patch_pick = root.fork(101);
  std::vector<Tensor<T>> patches;
  if (cfg.texture != "procedural") patches = detail::load_texture_patches<T>(cfg.texture);

  auto make_texture = [&]() {
    if (cfg.texture == "procedural")
      return procedural_texture<T>(h, w, cfg.model.input_c, texture_rng, cfg.texture_blur);
    const auto& patch = patches[static_cast<std::size_t>(patch_pick.uniform_int(
        static_cast<std::int64_t>(patches.size())))];
    return detail::crop_patch(patch, h, w, cfg.model.input_c, patch_pick);
  };

  // Raw category values map to indices by their position in C^S.
  auto build_pools = [&](const std::vector<Tensor<T>>& imgs, const std::vector<std::int64_t>& labs,
                         const std::string& tag) {
    std::pair<std::vector<DomainSample<T>>, std::vector<DomainSample<T>>> pools;  // (source, target)
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      const std::int64_t idx = cfg.split.index_of(labs[i]);
      if (idx < 0) continue;  // category outside C^S
      DomainSample<T> src;
      src.id = "src-" + tag + "-" + std::to_string(i);
      src.domain = Domain::source;
      src.label = idx;
      src.image = replicate_channels(imgs[i], cfg.model.input_c);
      pools.first.push_back(std::move(src));

      DomainSample<T> tgt;
      tgt.id = "tgt-" + tag + "-" + std::to_string(i);
      tgt.domain = Domain::target;
      tgt.label = idx;
      tgt.image = synthesize_mnist_m(imgs[i].reshaped({h, w}), make_texture());
      pools.second.push_back(std::move(tgt));
    }
    return pools;
  };

  auto [src_train, tgt_train] = build_pools(images, labels, "trn");
  RawSet<T> raw_source{std::move(src_train), {}};
  RawSet<T> raw_target{std::move(tgt_train), {}};
  if (!test_images.empty()) {
    auto [src_test, tgt_test] = build_pools(test_images, test_labels, "tst");
    raw_source.test_pool = std::move(src_test);
    raw_target.test_pool = std::move(tgt_test);
  }

  if (cfg.subsample < 1.0) {
    raw_source.train_pool = subsample(std::move(raw_source.train_pool), cfg.subsample, root.fork(102).seed());
    raw_target.train_pool = subsample(std::move(raw_target.train_pool), cfg.subsample, root.fork(103).seed());
    if (!raw_source.test_pool.empty()) {
      raw_source.test_pool = subsample(std::move(raw_source.test_pool), cfg.subsample, root.fork(104).seed());
      raw_target.test_pool = subsample(std::move(raw_target.test_pool), cfg.subsample, root.fork(105).seed());
    }
  }

  Splits<T> splits = build_splits(cfg.split, std::move(raw_source), std::move(raw_target), cfg.test_fraction);
  auto [train_kept, validation] = stratified_holdout(std::move(splits.train), cfg.validation_fraction,
                                                     root.fork(106).seed());
  auto [labeled, unlabeled] = mask_labels(std::move(train_kept), cfg.split.labeled_fraction, root.fork(107).seed());

  std::vector<DomainSample<T>> train = std::move(labeled);
  PrepareSummary summary;
  summary.train_labeled = train.size();
  summary.train_unlabeled = unlabeled.size();
  for (auto& s : unlabeled) train.push_back(std::move(s));

  const fs::path dir = cfg.resolved_data_dir();
  write_meta(dir, cfg.model.input_h, cfg.model.input_w, cfg.model.input_c, sizeof(T));
  write_split(dir, "train", train);
  write_split(dir, "val", validation);
  write_split(dir, "t_source", splits.t_source);
  write_split(dir, "t_target", splits.t_target);
  write_split(dir, "t_target_new", splits.t_target_new);

  summary.validation = validation.size();
  summary.t_source = splits.t_source.size();
  summary.t_target = splits.t_target.size();
  summary.t_target_new = splits.t_target_new.size();
  return summary;
}

}  // namespace midnet

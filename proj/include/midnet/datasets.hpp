// Two-domain dataset construction: unseen-category splits, partial label
// masking, class-balanced batch iteration, synthetic target-domain digit
// images, and the on-disk manifest + flat tensor format.
//
// Samples entering build_splits already carry category indices in
// [0, |source categories|); the raw-value mapping happens at load time.

#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "midnet/rng.hpp"
#include "midnet/tensor.hpp"

namespace midnet {

enum class Domain : int { source = 0, target = 1 };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

template <typename T>
struct DomainSample {
  std::string id;
  Domain domain{Domain::source};
  std::int64_t label{-1};         // -1 = hidden
  std::int64_t hidden_label{-1};  // survives masking, never persisted
  Tensor<T> image;                // H x W x C, values in [0,1]

  bool labeled() const { return label >= 0; }
  std::int64_t effective_label() const { return label >= 0 ? label : hidden_label; }
};

struct SplitSpec {
  std::vector<std::int64_t> source_categories;       // ordered C^S, raw values
  std::vector<std::int64_t> target_train_categories; // C^T, raw values
  double labeled_fraction{0.3};
  std::uint64_t seed{0};
  bool flip_augmentation{false};

  std::int64_t num_classes() const { return static_cast<std::int64_t>(source_categories.size()); }

  std::int64_t index_of(std::int64_t raw) const {
    for (std::size_t i = 0; i < source_categories.size(); ++i)
      if (source_categories[i] == raw) return static_cast<std::int64_t>(i);
    return -1;
  }

  std::set<std::int64_t> target_train_indices() const {
    std::set<std::int64_t> out;
    for (auto raw : target_train_categories) {
      const std::int64_t idx = index_of(raw);
      if (idx < 0)
        throw std::invalid_argument("data.target_train_categories: " + std::to_string(raw) +
                                    " is not a source category");
      out.insert(idx);
    }
    return out;
  }

  std::set<std::int64_t> unseen_indices() const {
    auto seen = target_train_indices();
    std::set<std::int64_t> out;
    for (std::int64_t i = 0; i < num_classes(); ++i)
      if (!seen.count(i)) out.insert(i);
    return out;
  }

  void validate(bool require_unseen = true) const {
    if (source_categories.empty()) throw std::invalid_argument("data.source_categories: must be nonempty");
    std::set<std::int64_t> uniq(source_categories.begin(), source_categories.end());
    if (uniq.size() != source_categories.size())
      throw std::invalid_argument("data.source_categories: duplicate category");
    if (labeled_fraction <= 0.0 || labeled_fraction > 1.0)
      throw std::invalid_argument("data.labeled_fraction: must be in (0,1]");
    (void)target_train_indices();  // membership check
    if (target_train_categories.empty())
      throw std::invalid_argument("data.target_train_categories: must be nonempty");
    if (require_unseen && unseen_indices().empty())
      throw std::invalid_argument(
          "data.target_train_categories: unseen split requested but the target already trains on every "
          "source category");
  }
};

// ---------------------------------------------------------------------------
// Target-domain synthesis.

// out[i,j,c] = |digit[i,j] - patch[i,j,c]|. digit: H x W (x 1); patch: H x W x C.
template <typename T>
Tensor<T> synthesize_mnist_m(const Tensor<T>& digit, const Tensor<T>& patch) {
  if (patch.rank() != 3) throw std::invalid_argument("synthesize: patch must be H x W x C");
  const std::int64_t h = patch.dim(0), w = patch.dim(1), c = patch.dim(2);
  const bool digit_ok = (digit.rank() == 2 && digit.dim(0) == h && digit.dim(1) == w) ||
                        (digit.rank() == 3 && digit.dim(0) == h && digit.dim(1) == w && digit.dim(2) == 1);
  if (!digit_ok)
    throw std::invalid_argument("synthesize: digit shape " + shape_str(digit.shape()) +
                                " is not aligned with patch " + shape_str(patch.shape()));
  for (std::int64_t i = 0; i < digit.numel(); ++i)
    if (digit[i] < T(0) || digit[i] > T(1)) throw std::invalid_argument("synthesize: digit values outside [0,1]");
  for (std::int64_t i = 0; i < patch.numel(); ++i)
    if (patch[i] < T(0) || patch[i] > T(1)) throw std::invalid_argument("synthesize: patch values outside [0,1]");
  Tensor<T> out({h, w, c});
  for (std::int64_t p = 0; p < h * w; ++p)
    for (std::int64_t k = 0; k < c; ++k) out[p * c + k] = std::abs(digit[p] - patch[p * c + k]);
  return out;
}

// Seeded colored noise smoothed by a box filter, rescaled into [lo, hi].
template <typename T>
Tensor<T> procedural_texture(std::int64_t h, std::int64_t w, std::int64_t c, Rng& rng, std::int64_t blur_radius = 3,
                             T lo = static_cast<T>(0.05), T hi = static_cast<T>(0.95)) {
  Tensor<T> noise({h, w, c});
  for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = static_cast<T>(rng.uniform());
  if (blur_radius > 0) {
    // separable box blur with clamped borders
    Tensor<T> tmp({h, w, c});
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t k = 0; k < c; ++k) {
          T acc = T(0);
          for (std::int64_t dx = -blur_radius; dx <= blur_radius; ++dx) {
            const std::int64_t xx = std::clamp<std::int64_t>(x + dx, 0, w - 1);
            acc += noise[(y * w + xx) * c + k];
          }
          tmp[(y * w + x) * c + k] = acc / static_cast<T>(2 * blur_radius + 1);
        }
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t k = 0; k < c; ++k) {
          T acc = T(0);
          for (std::int64_t dy = -blur_radius; dy <= blur_radius; ++dy) {
            const std::int64_t yy = std::clamp<std::int64_t>(y + dy, 0, h - 1);
            acc += tmp[(yy * w + x) * c + k];
          }
          noise[(y * w + x) * c + k] = acc / static_cast<T>(2 * blur_radius + 1);
        }
  }
  T mn = noise[0], mx = noise[0];
  for (std::int64_t i = 0; i < noise.numel(); ++i) {
    mn = std::min(mn, noise[i]);
    mx = std::max(mx, noise[i]);
  }
  const T span = mx > mn ? mx - mn : T(1);
  for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = lo + (hi - lo) * (noise[i] - mn) / span;
  return noise;
}

// ---------------------------------------------------------------------------
// Splits.

template <typename T>
struct RawSet {
  std::vector<DomainSample<T>> train_pool;
  std::vector<DomainSample<T>> test_pool;  // empty: carve from train_pool by test_fraction
};

template <typename T>
struct Splits {
  std::vector<DomainSample<T>> train;
  std::vector<DomainSample<T>> t_source;
  std::vector<DomainSample<T>> t_target;
  std::vector<DomainSample<T>> t_target_new;
};

namespace detail {

// Seeded, stratified by (label, domain).
template <typename T>
void stratified_carve(std::vector<DomainSample<T>>& pool, double fraction, std::uint64_t seed,
                      std::vector<DomainSample<T>>& kept, std::vector<DomainSample<T>>& held) {
  std::map<std::pair<std::int64_t, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pool.size(); ++i)
    groups[{pool[i].effective_label(), static_cast<int>(pool[i].domain)}].push_back(i);
  std::vector<bool> hold(pool.size(), false);
  Rng rng(seed);
  for (auto& [key, idxs] : groups) {
    rng.shuffle(idxs);
    const std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idxs.size())));
    for (std::size_t m = 0; m < k; ++m) hold[idxs[m]] = true;
  }
  for (std::size_t i = 0; i < pool.size(); ++i) (hold[i] ? held : kept).push_back(std::move(pool[i]));
}

}  // namespace detail

// Builds the train set and the three test splits. Train takes every source
// category plus only the target-train categories from the target domain;
// target test samples go to t_target (seen categories) or t_target_new
// (unseen). Leftover unseen-category samples from the target train pool
// never influence training and are routed into t_target_new as well.
template <typename T>
Splits<T> build_splits(const SplitSpec& spec, RawSet<T> raw_source, RawSet<T> raw_target,
                       double test_fraction = 0.3, bool require_unseen = true) {
  spec.validate(require_unseen);
  auto carve_if_needed = [&](RawSet<T>& raw, std::uint64_t salt) {
    if (!raw.test_pool.empty()) return;
    std::vector<DomainSample<T>> pool = std::move(raw.train_pool);
    raw.train_pool.clear();
    detail::stratified_carve(pool, test_fraction, spec.seed ^ salt, raw.train_pool, raw.test_pool);
  };
  carve_if_needed(raw_source, 0xA1u);
  carve_if_needed(raw_target, 0xB2u);

  const auto seen = spec.target_train_indices();
  const std::int64_t k = spec.num_classes();
  auto check = [&](const DomainSample<T>& s) {
    if (s.effective_label() < 0 || s.effective_label() >= k)
      throw std::invalid_argument("build_splits: sample " + s.id + " carries label " +
                                  std::to_string(s.effective_label()) + " outside [0," + std::to_string(k) + ")");
  };

  Splits<T> out;
  for (auto& s : raw_source.train_pool) {
    check(s);
    out.train.push_back(std::move(s));
  }
  for (auto& s : raw_source.test_pool) {
    check(s);
    out.t_source.push_back(std::move(s));
  }
  for (auto& s : raw_target.train_pool) {
    check(s);
    (seen.count(s.effective_label()) ? out.train : out.t_target_new).push_back(std::move(s));
  }
  for (auto& s : raw_target.test_pool) {
    check(s);
    (seen.count(s.effective_label()) ? out.t_target : out.t_target_new).push_back(std::move(s));
  }

  std::set<std::string> ids;
  auto claim = [&](const std::vector<DomainSample<T>>& v) {
    for (const auto& s : v)
      if (!ids.insert(s.id).second) throw std::invalid_argument("build_splits: duplicate sample id " + s.id);
  };
  claim(out.train);
  claim(out.t_source);
  claim(out.t_target);
  claim(out.t_target_new);
  return out;
}

// Seeded stratified holdout (validation carve); stratified by (label, domain).
template <typename T>
std::pair<std::vector<DomainSample<T>>, std::vector<DomainSample<T>>> stratified_holdout(
    std::vector<DomainSample<T>> samples, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) throw std::invalid_argument("holdout: fraction must be in [0,1)");
  std::vector<DomainSample<T>> kept, held;
  detail::stratified_carve(samples, fraction, seed, kept, held);
  return {std::move(kept), std::move(held)};
}

// Per-category proportional subsample (desk-scale runs).
template <typename T>
std::vector<DomainSample<T>> subsample(std::vector<DomainSample<T>> samples, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) throw std::invalid_argument("data.subsample: fraction must be in (0,1]");
  if (fraction == 1.0) return samples;
  std::vector<DomainSample<T>> kept, held;
  detail::stratified_carve(samples, 1.0 - fraction, seed, kept, held);
  return kept;
}

// Splits train into a labeled part and an unlabeled part with hidden (not
// deleted) labels. |labeled| = round(fraction * |train|), apportioned per
// category by largest remainder, drawn with the given seed.
template <typename T>
std::pair<std::vector<DomainSample<T>>, std::vector<DomainSample<T>>> mask_labels(
    std::vector<DomainSample<T>> train, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) throw std::invalid_argument("data.labeled_fraction: must be in (0,1]");
  std::map<std::int64_t, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].labeled()) throw std::invalid_argument("mask_labels: sample " + train[i].id + " has no label");
    by_cat[train[i].label].push_back(i);
  }
  const std::int64_t total = std::llround(fraction * static_cast<double>(train.size()));

  // largest-remainder apportionment of `total` across categories
  std::vector<std::pair<std::int64_t, std::int64_t>> quota;  // (category, count)
  std::vector<std::tuple<double, std::int64_t>> remainders;  // (-remainder, category)
  std::int64_t assigned = 0;
  for (const auto& [cat, idxs] : by_cat) {
    const double exact = fraction * static_cast<double>(idxs.size());
    const std::int64_t base = static_cast<std::int64_t>(std::floor(exact));
    quota.emplace_back(cat, base);
    assigned += base;
    remainders.emplace_back(-(exact - static_cast<double>(base)), cat);
  }
  std::sort(remainders.begin(), remainders.end());
  for (auto& [negrem, cat] : remainders) {
    if (assigned >= total) break;
    for (auto& [c, q] : quota)
      if (c == cat && q < static_cast<std::int64_t>(by_cat[c].size())) {
        ++q;
        ++assigned;
        break;
      }
  }

  Rng rng(seed);
  std::vector<bool> keep_label(train.size(), false);
  for (const auto& [cat, q] : quota) {
    auto idxs = by_cat[cat];
    rng.shuffle(idxs);
    for (std::int64_t m = 0; m < q && m < static_cast<std::int64_t>(idxs.size()); ++m) keep_label[idxs[m]] = true;
  }

  std::vector<DomainSample<T>> labeled, unlabeled;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (keep_label[i]) {
      labeled.push_back(std::move(train[i]));
    } else {
      DomainSample<T> s = std::move(train[i]);
      s.hidden_label = s.label;
      s.label = -1;
      unlabeled.push_back(std::move(s));
    }
  }
  return {std::move(labeled), std::move(unlabeled)};
}

// ---------------------------------------------------------------------------
// Batch iteration.

template <typename T>
struct Batch {
  Tensor<T> labeled_images;   // N_L x H x W x C
  Tensor<T> labeled_targets;  // N_L x K one-hot
  std::vector<std::int64_t> labeled_labels;
  std::vector<int> labeled_domains;  // 0 source, 1 target
  Tensor<T> unlabeled_images;        // N_U x H x W x C
  std::vector<int> unlabeled_domains;
};

// Class-balanced labeled draws (per-category counts differ by at most one
// per batch, remainder slots rotating), uniform unlabeled draws over both
// domains. (seed, batch index) -> batch is a pure function; emitted batches
// own their storage.
template <typename T>
class BatchLoader {
 public:
  BatchLoader(std::vector<DomainSample<T>> labeled, std::vector<DomainSample<T>> unlabeled, std::int64_t num_classes,
              bool flip_augmentation, std::uint64_t seed)
      : labeled_(std::move(labeled)),
        unlabeled_(std::move(unlabeled)),
        num_classes_(num_classes),
        flip_(flip_augmentation),
        rng_(Rng(seed).fork(0xBA7C)) {
    if (labeled_.empty()) throw std::invalid_argument("loader: need at least one labeled sample");
    for (std::size_t i = 0; i < labeled_.size(); ++i) {
      const auto& s = labeled_[i];
      if (!s.labeled() || s.label >= num_classes_)
        throw std::invalid_argument("loader: bad label on sample " + s.id);
      by_cat_[s.label].push_back(i);
    }
    for (auto& [cat, idxs] : by_cat_) {
      order_[cat] = idxs;
      rng_.shuffle(order_[cat]);
      cursor_[cat] = 0;
    }
    unlabeled_order_.resize(unlabeled_.size());
    for (std::size_t i = 0; i < unlabeled_.size(); ++i) unlabeled_order_[i] = static_cast<std::int64_t>(i);
    rng_.shuffle(unlabeled_order_);
  }

  const std::vector<DomainSample<T>>& labeled_pool() const { return labeled_; }
  const std::vector<DomainSample<T>>& unlabeled_pool() const { return unlabeled_; }

  Batch<T> next(std::int64_t n_l, std::int64_t n_u) {
    Batch<T> b;
    draw(n_l, n_u, &b);
    ++batch_index_;
    return b;
  }

  // Replays the draw sequence without materializing pixels; used to
  // fast-forward to a checkpointed step so (seed, step) -> batch stays a
  // pure function across resumes.
  void skip(std::int64_t batches, std::int64_t n_l, std::int64_t n_u) {
    for (std::int64_t t = 0; t < batches; ++t) {
      draw(n_l, n_u, nullptr);
      ++batch_index_;
    }
  }

  std::int64_t batches_drawn() const { return batch_index_; }

 private:
  void draw(std::int64_t n_l, std::int64_t n_u, Batch<T>* out) {
    const std::int64_t k = static_cast<std::int64_t>(by_cat_.size());
    if (n_l < k)
      throw std::invalid_argument("loader: labeled batch size " + std::to_string(n_l) +
                                  " cannot balance " + std::to_string(k) + " categories");
    if (n_u > 0 && unlabeled_.empty())
      throw std::invalid_argument("loader: unlabeled samples requested but the pool is empty");

    std::vector<std::int64_t> cats;
    for (const auto& [cat, idxs] : by_cat_) cats.push_back(cat);
    const std::int64_t base = n_l / k, rem = n_l % k;

    const Shape& img = labeled_.front().image.shape();
    if (out) {
      out->labeled_images = Tensor<T>({n_l, img[0], img[1], img[2]});
      out->labeled_targets = Tensor<T>({n_l, num_classes_});
      out->unlabeled_images = Tensor<T>({n_u, img[0], img[1], img[2]});
    }
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < k; ++ci) {
      const std::int64_t cat = cats[static_cast<std::size_t>(ci)];
      // remainder slots rotate across batches so epoch counts stay within
      // one batch of each other
      std::int64_t want = base + (((ci - batch_index_) % k + k) % k < rem ? 1 : 0);
      for (std::int64_t m = 0; m < want; ++m, ++row) {
        const DomainSample<T>& s = labeled_[draw_from(cat)];
        const bool flip = flip_ && rng_.bernoulli(0.5);
        if (out) {
          copy_image(s.image, out->labeled_images, row, flip);
          out->labeled_targets[row * num_classes_ + s.label] = T(1);
          out->labeled_labels.push_back(s.label);
          out->labeled_domains.push_back(static_cast<int>(s.domain));
        }
      }
    }

    for (std::int64_t m = 0; m < n_u; ++m) {
      const DomainSample<T>& s = unlabeled_[draw_unlabeled()];
      const bool flip = flip_ && rng_.bernoulli(0.5);
      if (out) {
        copy_image(s.image, out->unlabeled_images, m, flip);
        out->unlabeled_domains.push_back(static_cast<int>(s.domain));
      }
    }
  }
  std::size_t draw_from(std::int64_t cat) {
    auto& ord = order_[cat];
    auto& cur = cursor_[cat];
    if (cur >= ord.size()) {
      rng_.shuffle(ord);
      cur = 0;
    }
    return ord[cur++];
  }

  std::size_t draw_unlabeled() {
    if (unlabeled_cursor_ >= unlabeled_order_.size()) {
      rng_.shuffle(unlabeled_order_);
      unlabeled_cursor_ = 0;
    }
    return static_cast<std::size_t>(unlabeled_order_[unlabeled_cursor_++]);
  }

  void copy_image(const Tensor<T>& src, Tensor<T>& dst, std::int64_t row, bool flip) {
    const std::int64_t h = src.dim(0), w = src.dim(1), c = src.dim(2);
    T* out = dst.data() + row * h * w * c;
    if (!flip) {
      std::copy(src.data(), src.data() + h * w * c, out);
      return;
    }
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t ch = 0; ch < c; ++ch) out[(y * w + x) * c + ch] = src[(y * w + (w - 1 - x)) * c + ch];
  }

  std::vector<DomainSample<T>> labeled_;
  std::vector<DomainSample<T>> unlabeled_;
  std::int64_t num_classes_;
  bool flip_;
  Rng rng_;
  std::map<std::int64_t, std::vector<std::size_t>> by_cat_;
  std::map<std::int64_t, std::vector<std::size_t>> order_;
  std::map<std::int64_t, std::size_t> cursor_;
  std::vector<std::int64_t> unlabeled_order_;
  std::size_t unlabeled_cursor_{0};
  std::int64_t batch_index_{0};
};

// ---------------------------------------------------------------------------
// On-disk format: <name>.manifest with lines `id,domain,label,offset`
// (label -1 for hidden, offset in bytes into <name>.bin), a flat binary
// tensor file, and a shared `meta` file carrying the image shape.

template <typename T>
void write_split(const std::filesystem::path& dir, const std::string& name,
                 const std::vector<DomainSample<T>>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream man(dir / (name + ".manifest"), std::ios::trunc);
  std::ofstream bin(dir / (name + ".bin"), std::ios::binary | std::ios::trunc);
  if (!man || !bin) throw std::runtime_error("write_split: cannot write into " + dir.string());
  std::uint64_t offset = 0;
  for (const auto& s : samples) {
    man << s.id << "," << domain_name(s.domain) << "," << s.label << "," << offset << "\n";
    bin.write(reinterpret_cast<const char*>(s.image.data()),
              static_cast<std::streamsize>(s.image.numel() * sizeof(T)));
    offset += static_cast<std::uint64_t>(s.image.numel() * sizeof(T));
  }
  if (!man || !bin) throw std::runtime_error("write_split: write failed in " + dir.string());
}

inline void write_meta(const std::filesystem::path& dir, std::int64_t h, std::int64_t w, std::int64_t c,
                       std::size_t scalar_bytes) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "meta");
  f << h << " " << w << " " << c << " " << scalar_bytes << "\n";
  if (!f) throw std::runtime_error("write_meta: cannot write " + (dir / "meta").string());
}

inline std::array<std::int64_t, 3> read_meta(const std::filesystem::path& dir, std::size_t scalar_bytes) {
  std::ifstream f(dir / "meta");
  std::int64_t h, w, c;
  std::size_t bytes;
  if (!(f >> h >> w >> c >> bytes)) throw std::runtime_error("read_meta: cannot parse " + (dir / "meta").string());
  if (bytes != scalar_bytes)
    throw std::runtime_error("read_meta: stored scalar width " + std::to_string(bytes) + " does not match");
  return {h, w, c};
}

template <typename T>
std::vector<DomainSample<T>> read_split(const std::filesystem::path& dir, const std::string& name) {
  const auto [h, w, c] = read_meta(dir, sizeof(T));
  std::ifstream man(dir / (name + ".manifest"));
  std::ifstream bin(dir / (name + ".bin"), std::ios::binary);
  if (!man || !bin)
    throw std::runtime_error("read_split: missing " + (dir / name).string() + ".{manifest,bin}");
  std::vector<DomainSample<T>> out;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    DomainSample<T> s;
    std::size_t p0 = line.find(',');
    std::size_t p1 = line.find(',', p0 + 1);
    std::size_t p2 = line.find(',', p1 + 1);
    if (p0 == std::string::npos || p1 == std::string::npos || p2 == std::string::npos)
      throw std::runtime_error("read_split: malformed manifest line: " + line);
    s.id = line.substr(0, p0);
    const std::string dom = line.substr(p0 + 1, p1 - p0 - 1);
    if (dom == "source") {
      s.domain = Domain::source;
    } else if (dom == "target") {
      s.domain = Domain::target;
    } else {
      throw std::runtime_error("read_split: unknown domain tag: " + dom);
    }
    s.label = std::stoll(line.substr(p1 + 1, p2 - p1 - 1));
    const std::uint64_t offset = std::stoull(line.substr(p2 + 1));
    s.image = Tensor<T>({h, w, c});
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(s.image.data()), static_cast<std::streamsize>(s.image.numel() * sizeof(T)));
    if (!bin) throw std::runtime_error("read_split: truncated tensor file for " + s.id);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw inputs: MNIST-style idx files and binary PPM texture patches.

namespace detail {

inline std::uint32_t read_be32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// Returns H x W x 1 images scaled to [0,1].
template <typename T>
std::vector<Tensor<T>> read_idx_images(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("idx: cannot open " + path.string());
  if (detail::read_be32(f) != 2051u) throw std::runtime_error("idx: bad image magic in " + path.string());
  const std::uint32_t n = detail::read_be32(f);
  const std::uint32_t rows = detail::read_be32(f);
  const std::uint32_t cols = detail::read_be32(f);
  std::vector<unsigned char> raw(static_cast<std::size_t>(n) * rows * cols);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("idx: truncated image file " + path.string());
  std::vector<Tensor<T>> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor<T> img({rows, cols, 1});
    for (std::uint32_t p = 0; p < rows * cols; ++p)
      img[p] = static_cast<T>(raw[static_cast<std::size_t>(i) * rows * cols + p]) / T(255);
    out.push_back(std::move(img));
  }
  return out;
}

inline std::vector<std::int64_t> read_idx_labels(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("idx: cannot open " + path.string());
  if (detail::read_be32(f) != 2049u) throw std::runtime_error("idx: bad label magic in " + path.string());
  const std::uint32_t n = detail::read_be32(f);
  std::vector<unsigned char> raw(n);
  f.read(reinterpret_cast<char*>(raw.data()), n);
  if (!f) throw std::runtime_error("idx: truncated label file " + path.string());
  return std::vector<std::int64_t>(raw.begin(), raw.end());
}

// Binary (P6) 8-bit PPM, values scaled to [0,1].
template <typename T>
Tensor<T> read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot open " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("ppm: " + path.string() + " is not a binary P6 file");
  auto next_int = [&]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return std::stoll(tok);
    }
    throw std::runtime_error("ppm: truncated header in " + path.string());
  };
  const std::int64_t w = next_int(), h = next_int(), maxv = next_int();
  if (maxv != 255) throw std::runtime_error("ppm: only 8-bit files supported: " + path.string());
  f.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("ppm: truncated pixel data in " + path.string());
  Tensor<T> img({h, w, 3});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<T>(raw[static_cast<std::size_t>(i)]) / T(255);
  return img;
}

// Grayscale H x W x 1 -> H x W x C by channel replication.
template <typename T>
Tensor<T> replicate_channels(const Tensor<T>& img, std::int64_t c) {
  if (img.rank() != 3 || img.dim(2) != 1) throw std::invalid_argument("replicate_channels: expects H x W x 1");
  Tensor<T> out({img.dim(0), img.dim(1), c});
  for (std::int64_t p = 0; p < img.dim(0) * img.dim(1); ++p)
    for (std::int64_t k = 0; k < c; ++k) out[p * c + k] = img[p];
  return out;
}

}  // namespace midnet

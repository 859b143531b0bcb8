// The MIDNet network: two independent residual encoders producing the
// class-feature and domain-feature latents, a skip-connected mirror
// decoder, and a pooled dense classifier head.

#pragma once

#include <numeric>

#include "midnet/layers.hpp"

namespace midnet {

struct ModelConfig {
  std::int64_t input_h{28};
  std::int64_t input_w{28};
  std::int64_t input_c{3};
  std::vector<std::int64_t> encoder_filters{8, 16, 32, 8};
  std::vector<std::int64_t> encoder_strides{1, 2, 2, 1};
  std::vector<std::int64_t> classifier_hidden{128, 128};
  std::int64_t latent_channels{8};
  std::int64_t num_classes{10};

  std::int64_t stride_product() const {
    std::int64_t p = 1;
    for (auto s : encoder_strides) p *= s;
    return p;
  }
  std::int64_t latent_h() const { return input_h / stride_product(); }
  std::int64_t latent_w() const { return input_w / stride_product(); }
  std::int64_t latent_numel() const { return latent_h() * latent_w() * latent_channels; }

  void validate() const {
    if (encoder_filters.empty()) throw std::invalid_argument("model.filters: must be nonempty");
    if (encoder_filters.size() != encoder_strides.size())
      throw std::invalid_argument("model.filters/model.strides: lists must have equal length");
    for (auto s : encoder_strides)
      if (s != 1 && s != 2)
        throw std::invalid_argument("model.strides: each stride must be 1 or 2 (mirror decoder upsampling)");
    for (auto f : encoder_filters)
      if (f < 1) throw std::invalid_argument("model.filters: entries must be positive");
    if (classifier_hidden.empty()) throw std::invalid_argument("model.hidden: must be nonempty");
    if (latent_channels != encoder_filters.back())
      throw std::invalid_argument("model.latent_channels: must equal the last filters entry");
    if (input_h < 1 || input_w < 1 || input_c < 1) throw std::invalid_argument("model.input: bad dimensions");
    const std::int64_t sp = stride_product();
    if (input_h % sp != 0 || input_w % sp != 0)
      throw std::invalid_argument("model.input: spatial size must divide the stride product " + std::to_string(sp));
    if (num_classes < 2) throw std::invalid_argument("model.num_classes: need at least 2");
  }
};

template <typename T>
class Encoder {
 public:
  struct Out {
    Var<T> latent;
    std::vector<Var<T>> taps;  // per-block outputs, for decoder skips
  };

  Encoder() = default;
  Encoder(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng rng) {
    std::int64_t cin = cfg.input_c;
    for (std::size_t i = 0; i < cfg.encoder_filters.size(); ++i) {
      blocks_.emplace_back(ps, prefix + ".block" + std::to_string(i), cin, cfg.encoder_filters[i],
                           cfg.encoder_strides[i], rng);
      cin = cfg.encoder_filters[i];
    }
  }

  Out operator()(ParamGraph<T>& pg, const Var<T>& x, Mode mode) const {
    Out out;
    Var<T> h = x;
    for (const auto& b : blocks_) {
      h = b(pg, h, mode);
      out.taps.push_back(h);
    }
    out.latent = h;
    return out;
  }

 private:
  std::vector<ResidualBlock<T>> blocks_;
};

// Mirrors the encoder: one residual stage per encoder stage in reverse,
// upsampling where the encoder strode, and concatenating the matching
// domain-encoder tap after each upsample.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng rng) {
    const auto& f = cfg.encoder_filters;
    const auto& s = cfg.encoder_strides;
    std::int64_t cin = 2 * cfg.latent_channels;
    for (std::int64_t i = static_cast<std::int64_t>(f.size()) - 1; i >= 0; --i) {
      Stage st;
      st.upsample = s[static_cast<std::size_t>(i)] == 2;
      std::int64_t block_in = cin;
      if (st.upsample) {
        st.tap = i - 1;
        block_in += f[static_cast<std::size_t>(i - 1)];
      }
      const std::int64_t target = (i == 0) ? f[0] : f[static_cast<std::size_t>(i - 1)];
      st.block = ResidualBlock<T>(ps, prefix + ".stage" + std::to_string(i), block_in, target, 1, rng);
      cin = target;
      stages_.push_back(std::move(st));
    }
    out_conv_ = Conv2dLayer<T>(ps, prefix + ".out", 1, cin, cfg.input_c, 1, rng);
  }

  Var<T> operator()(ParamGraph<T>& pg, const Var<T>& fc, const Var<T>& fd, const std::vector<Var<T>>& taps,
                    Mode mode) const {
    check_same_shape(fc->value, fd->value, "decode");
    Var<T> h = concat_last(fc, fd);
    for (const auto& st : stages_) {
      if (st.upsample) {
        h = upsample_nearest2x(h);
        if (st.tap < 0 || st.tap >= static_cast<std::int64_t>(taps.size()))
          throw std::invalid_argument("decode: missing skip activation for stage");
        h = concat_last(h, taps[static_cast<std::size_t>(st.tap)]);
      }
      h = st.block(pg, h, mode);
    }
    return sigmoid(out_conv_(pg, h));
  }

 private:
  struct Stage {
    ResidualBlock<T> block;
    bool upsample{false};
    std::int64_t tap{-1};
  };
  std::vector<Stage> stages_;
  Conv2dLayer<T> out_conv_;
};

template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng rng) {
    std::int64_t in = cfg.latent_channels;
    int idx = 0;
    for (auto h : cfg.classifier_hidden) {
      hidden_.emplace_back(ps, prefix + ".fc" + std::to_string(idx++), in, h, rng);
      in = h;
    }
    out_ = Dense<T>(ps, prefix + ".out", in, cfg.num_classes, rng);
  }

  // Probabilities over classes; rows sum to 1.
  Var<T> operator()(ParamGraph<T>& pg, const Var<T>& fc_latent) const {
    Var<T> h = global_avg_pool(fc_latent);
    for (const auto& d : hidden_) h = relu(d(pg, h));
    return softmax_rows(out_(pg, h));
  }

 private:
  std::vector<Dense<T>> hidden_;
  Dense<T> out_;
};

template <typename T>
class MidnetModel {
 public:
  explicit MidnetModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    enc_cat_ = Encoder<T>(store_, "e1", cfg_, rng.fork(1));
    enc_dom_ = Encoder<T>(store_, "e2", cfg_, rng.fork(2));
    decoder_ = Decoder<T>(store_, "dec", cfg_, rng.fork(3));
    classifier_ = ClassifierHead<T>(store_, "cls", cfg_, rng.fork(4));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.input_h || x.dim(2) != cfg_.input_w || x.dim(3) != cfg_.input_c)
      throw std::invalid_argument("model: input shape " + shape_str(x.shape()) + " does not match config (N," +
                                  std::to_string(cfg_.input_h) + "," + std::to_string(cfg_.input_w) + "," +
                                  std::to_string(cfg_.input_c) + ")");
  }

  Var<T> encode_categorical(ParamGraph<T>& pg, const Var<T>& x, Mode mode) const {
    check_input(x->value);
    return enc_cat_(pg, x, mode).latent;
  }

  typename Encoder<T>::Out encode_domain(ParamGraph<T>& pg, const Var<T>& x, Mode mode) const {
    check_input(x->value);
    return enc_dom_(pg, x, mode);
  }

  Var<T> decode(ParamGraph<T>& pg, const Var<T>& fc, const Var<T>& fd, const std::vector<Var<T>>& taps,
                Mode mode) const {
    return decoder_(pg, fc, fd, taps, mode);
  }

  Var<T> classify(ParamGraph<T>& pg, const Var<T>& fc) const { return classifier_(pg, fc); }

  // Gradient-free evaluation-mode helpers on plain tensors.
  Tensor<T> predict_probs(const Tensor<T>& images) const {
    Graph<T> g;
    ParamGraph<T> pg(g, false);
    Var<T> x = g.constant(images);
    return classify(pg, encode_categorical(pg, x, Mode::eval()))->value;
  }

  Tensor<T> categorical_features(const Tensor<T>& images) const {
    Graph<T> g;
    ParamGraph<T> pg(g, false);
    return encode_categorical(pg, g.constant(images), Mode::eval())->value;
  }

  Tensor<T> domain_features(const Tensor<T>& images) const {
    Graph<T> g;
    ParamGraph<T> pg(g, false);
    return encode_domain(pg, g.constant(images), Mode::eval()).latent->value;
  }

  Tensor<T> reconstruct(const Tensor<T>& images) const {
    Graph<T> g;
    ParamGraph<T> pg(g, false);
    Var<T> x = g.constant(images);
    Var<T> fc = encode_categorical(pg, x, Mode::eval());
    auto dom = encode_domain(pg, x, Mode::eval());
    return decode(pg, fc, dom.latent, dom.taps, Mode::eval())->value;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  Encoder<T> enc_cat_;
  Encoder<T> enc_dom_;
  Decoder<T> decoder_;
  ClassifierHead<T> classifier_;
};

}  // namespace midnet

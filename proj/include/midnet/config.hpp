// Run configuration: one flat text file of dotted keys (`loss.lambda3 =
// 0.001`), overridable by repeated `--set key=value` flags. The resolved
// configuration (defaults applied, overrides merged) echoes back out in a
// canonical form, and rerunning from an echo reproduces the run.

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "midnet/losses.hpp"
#include "midnet/model.hpp"
#include "midnet/trainer.hpp"

namespace midnet {

class KeyValues {
 public:
  static KeyValues from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open file " + path);
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                      ": expected `key = value`, got: " + line);
        continue;
      }
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  void set(const std::string& key, const std::string& value) {
    if (key.empty()) throw std::invalid_argument("config: empty key");
    values_[key] = value;
  }

  // `key=value` as passed on the command line.
  void set_pair(const std::string& pair) {
    const std::size_t eq = pair.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config: --set expects key=value, got: " + pair);
    set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
  }

  bool contains(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    touch(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config: " + key + ": not a number: " + it->second);
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const std::int64_t v = std::stoll(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config: " + key + ": not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::invalid_argument("config: " + key + ": expected true/false, got: " + it->second);
  }

  std::vector<std::int64_t> get_int_list(const std::string& key, std::vector<std::int64_t> fallback) {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::int64_t> out;
    std::string token;
    std::istringstream is(it->second);
    while (std::getline(is, token, ',')) {
      token = trim(token);
      if (token.empty()) continue;
      try {
        out.push_back(std::stoll(token));
      } catch (...) {
        throw std::invalid_argument("config: " + key + ": bad list entry: " + token);
      }
    }
    if (out.empty()) throw std::invalid_argument("config: " + key + ": empty list");
    return out;
  }

  // Keys that were set but never consumed are configuration errors.
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      if (!touched_.count(k)) throw std::invalid_argument("config: unknown key: " + k);
  }

 private:
  static std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }
  void touch(const std::string& key) { touched_.insert(key); }

  std::map<std::string, std::string> values_;
  std::set<std::string> touched_;
};

// The full run configuration: data construction, architecture, objective
// weights, optimization, and run bookkeeping.
struct RunConfig {
  std::string run_name{"run"};
  std::string out_root{"runs"};
  std::uint64_t seed{0};
  std::int64_t threads{0};  // 0 = library default

  // raw inputs (idx files) and prepared-data location
  std::string raw_images, raw_labels, raw_test_images, raw_test_labels;
  std::string data_dir;  // defaults to <out_root>/<run_name>/data
  std::string texture{"procedural"};
  std::int64_t texture_blur{3};
  double test_fraction{0.3};
  double validation_fraction{0.1};
  double subsample{1.0};

  SplitSpec split;
  ModelConfig model;
  LossWeights<float> weights;
  OptimConfig optim;
  std::int64_t eval_batch{256};

  std::string run_dir() const { return out_root + "/" + run_name; }
  std::string resolved_data_dir() const { return data_dir.empty() ? run_dir() + "/data" : data_dir; }

  static RunConfig from(KeyValues& kv) {
    RunConfig c;
    c.run_name = kv.get_string("run.name", c.run_name);
    c.out_root = kv.get_string("run.out_root", c.out_root);
    c.seed = static_cast<std::uint64_t>(kv.get_int("run.seed", 0));
    c.threads = kv.get_int("run.threads", 0);

    c.raw_images = kv.get_string("data.raw_images", "");
    c.raw_labels = kv.get_string("data.raw_labels", "");
    c.raw_test_images = kv.get_string("data.raw_test_images", "");
    c.raw_test_labels = kv.get_string("data.raw_test_labels", "");
    c.data_dir = kv.get_string("data.dir", "");
    c.texture = kv.get_string("data.texture", c.texture);
    c.texture_blur = kv.get_int("data.texture_blur", c.texture_blur);
    c.test_fraction = kv.get_double("data.test_fraction", c.test_fraction);
    c.validation_fraction = kv.get_double("data.validation_fraction", c.validation_fraction);
    c.subsample = kv.get_double("data.subsample", c.subsample);

    c.split.source_categories = kv.get_int_list("data.source_categories", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    c.split.target_train_categories = kv.get_int_list("data.target_train_categories", {0, 1, 2, 3, 4});
    c.split.labeled_fraction = kv.get_double("data.labeled_fraction", 0.3);
    c.split.flip_augmentation = kv.get_bool("data.flip_augmentation", false);
    c.split.seed = c.seed;

    c.model.input_h = kv.get_int("model.input_h", 28);
    c.model.input_w = kv.get_int("model.input_w", 28);
    c.model.input_c = kv.get_int("model.input_c", 3);
    c.model.encoder_filters = kv.get_int_list("model.filters", {8, 16, 32, 8});
    c.model.encoder_strides = kv.get_int_list("model.strides", {1, 2, 2, 1});
    c.model.classifier_hidden = kv.get_int_list("model.hidden", {128, 128});
    c.model.latent_channels = kv.get_int("model.latent_channels", c.model.encoder_filters.back());
    c.model.num_classes = static_cast<std::int64_t>(c.split.source_categories.size());

    c.weights.lambda_rec = static_cast<float>(kv.get_double("loss.lambda1", 1.0));
    c.weights.lambda_cls = static_cast<float>(kv.get_double("loss.lambda2", 10.0));
    c.weights.lambda_mi = static_cast<float>(kv.get_double("loss.lambda3", 1e-3));
    c.weights.lambda_clus = static_cast<float>(kv.get_double("loss.lambda4", 100.0));
    c.weights.lambda_ssl = static_cast<float>(kv.get_double("loss.lambda5", 1000.0));
    c.weights.eta = static_cast<float>(kv.get_double("loss.eta", 0.0));
    c.weights.margin = static_cast<float>(kv.get_double("loss.margin", 0.2));
    c.weights.mix_alpha = static_cast<float>(kv.get_double("loss.alpha", 0.75));
    c.weights.clamp_mi = kv.get_bool("loss.clamp_mi", true);

    c.optim.main_lr = kv.get_double("optim.main_lr", 1e-5);
    c.optim.momentum = kv.get_double("optim.momentum", 0.9);
    c.optim.mine_lr = kv.get_double("optim.mine_lr", 1e-5);
    c.optim.mine_beta1 = kv.get_double("optim.mine_beta", 0.9);
    c.optim.l2_scale = kv.get_double("optim.l2", 1e-5);
    c.optim.steps = kv.get_int("optim.steps", 2000);
    c.optim.batch_labeled = kv.get_int("optim.batch_labeled", 32);
    c.optim.batch_unlabeled = kv.get_int("optim.batch_unlabeled", 32);
    c.optim.mine_steps = kv.get_int("optim.mine_steps", 1);
    c.optim.eval_every = kv.get_int("optim.eval_every", 200);
    c.optim.checkpoint_every = kv.get_int("optim.checkpoint_every", 500);
    c.optim.seed = c.seed;

    c.eval_batch = kv.get_int("eval.batch", 256);

    kv.reject_unknown();
    c.validate();
    return c;
  }

  void validate() const {
    split.validate(false);
    model.validate();
    weights.validate();
    optim.validate();
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
      throw std::invalid_argument("data.test_fraction: must be in (0,1)");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
      throw std::invalid_argument("data.validation_fraction: must be in [0,1)");
    if (subsample <= 0.0 || subsample > 1.0) throw std::invalid_argument("data.subsample: must be in (0,1]");
    if (texture_blur < 0) throw std::invalid_argument("data.texture_blur: must be nonnegative");
    if (eval_batch < 1) throw std::invalid_argument("eval.batch: must be positive");
  }

  // Canonical echo: sorted keys, every resolved value.
  std::string echo() const {
    std::ostringstream os;
    os << std::setprecision(17);
    auto list = [](const std::vector<std::int64_t>& v) {
      std::ostringstream ls;
      for (std::size_t i = 0; i < v.size(); ++i) ls << (i ? "," : "") << v[i];
      return ls.str();
    };
    os << "data.dir = " << data_dir << "\n";
    os << "data.flip_augmentation = " << (split.flip_augmentation ? "true" : "false") << "\n";
    os << "data.labeled_fraction = " << split.labeled_fraction << "\n";
    os << "data.raw_images = " << raw_images << "\n";
    os << "data.raw_labels = " << raw_labels << "\n";
    os << "data.raw_test_images = " << raw_test_images << "\n";
    os << "data.raw_test_labels = " << raw_test_labels << "\n";
    os << "data.source_categories = " << list(split.source_categories) << "\n";
    os << "data.subsample = " << subsample << "\n";
    os << "data.target_train_categories = " << list(split.target_train_categories) << "\n";
    os << "data.test_fraction = " << test_fraction << "\n";
    os << "data.texture = " << texture << "\n";
    os << "data.texture_blur = " << texture_blur << "\n";
    os << "data.validation_fraction = " << validation_fraction << "\n";
    os << "eval.batch = " << eval_batch << "\n";
    os << "loss.alpha = " << weights.mix_alpha << "\n";
    os << "loss.clamp_mi = " << (weights.clamp_mi ? "true" : "false") << "\n";
    os << "loss.eta = " << weights.eta << "\n";
    os << "loss.lambda1 = " << weights.lambda_rec << "\n";
    os << "loss.lambda2 = " << weights.lambda_cls << "\n";
    os << "loss.lambda3 = " << weights.lambda_mi << "\n";
    os << "loss.lambda4 = " << weights.lambda_clus << "\n";
    os << "loss.lambda5 = " << weights.lambda_ssl << "\n";
    os << "loss.margin = " << weights.margin << "\n";
    os << "model.filters = " << list(model.encoder_filters) << "\n";
    os << "model.hidden = " << list(model.classifier_hidden) << "\n";
    os << "model.input_c = " << model.input_c << "\n";
    os << "model.input_h = " << model.input_h << "\n";
    os << "model.input_w = " << model.input_w << "\n";
    os << "model.latent_channels = " << model.latent_channels << "\n";
    os << "model.strides = " << list(model.encoder_strides) << "\n";
    os << "optim.batch_labeled = " << optim.batch_labeled << "\n";
    os << "optim.batch_unlabeled = " << optim.batch_unlabeled << "\n";
    os << "optim.checkpoint_every = " << optim.checkpoint_every << "\n";
    os << "optim.eval_every = " << optim.eval_every << "\n";
    os << "optim.l2 = " << optim.l2_scale << "\n";
    os << "optim.main_lr = " << optim.main_lr << "\n";
    os << "optim.mine_beta = " << optim.mine_beta1 << "\n";
    os << "optim.mine_lr = " << optim.mine_lr << "\n";
    os << "optim.mine_steps = " << optim.mine_steps << "\n";
    os << "optim.momentum = " << optim.momentum << "\n";
    os << "optim.steps = " << optim.steps << "\n";
    os << "run.name = " << run_name << "\n";
    os << "run.out_root = " << out_root << "\n";
    os << "run.seed = " << seed << "\n";
    os << "run.threads = " << threads << "\n";
    return os.str();
  }
};

}  // namespace midnet

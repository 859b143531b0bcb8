// Command-line entry point: prepare-data, train, evaluate, sweep and
// export-embeddings over flat-key config files.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime divergence,
// 3 I/O or other runtime error.

#ifdef _OPENMP
#include <omp.h>
#endif

#include <iostream>

#include "CLI11.hpp"
#include "midnet.hpp"

namespace {

using namespace midnet;

struct CliOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_override;
  std::int64_t seed_override{-1};
};

RunConfig load_config(const CliOptions& opt) {
  KeyValues kv = opt.config_path.empty() ? KeyValues() : KeyValues::from_file(opt.config_path);
  for (const auto& pair : opt.sets) kv.set_pair(pair);
  if (!opt.out_override.empty()) kv.set("run.out_root", opt.out_override);
  if (opt.seed_override >= 0) kv.set("run.seed", std::to_string(opt.seed_override));
  RunConfig cfg = RunConfig::from(kv);
  if (cfg.threads > 0) {
#ifdef _OPENMP
    omp_set_num_threads(static_cast<int>(cfg.threads));
#endif
    Eigen::setNbThreads(static_cast<int>(cfg.threads));
  }
  return cfg;
}

void add_common(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_path, "flat-key configuration file");
  cmd->add_option("--set", opt.sets, "override a config key, e.g. --set loss.lambda3=0.001");
  cmd->add_option("--out", opt.out_override, "output root (overrides run.out_root)");
  cmd->add_option("--seed", opt.seed_override, "seed for all randomness (overrides run.seed)");
}

void print_metrics(const MetricsReport& r) {
  std::cout << "split " << r.split << ": macro_f1 " << r.macro_f1 << "  macro_recall " << r.macro_recall
            << "  macro_precision " << r.macro_precision << "  (" << r.samples << " samples)\n";
}

void write_metrics_record(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream f(path, std::ios::trunc);
  f << "split = " << r.split << "\n";
  f << "macro_f1 = " << r.macro_f1 << "\n";
  f << "macro_recall = " << r.macro_recall << "\n";
  f << "macro_precision = " << r.macro_precision << "\n";
  f << "samples = " << r.samples << "\n";
  for (std::size_t c = 0; c < r.f1.size(); ++c) {
    if (!r.included[c]) continue;
    f << "class" << c << ".precision = " << r.precision[c] << "\n";
    f << "class" << c << ".recall = " << r.recall[c] << "\n";
    f << "class" << c << ".f1 = " << r.f1[c] << "\n";
  }
  f << "confusion =";
  for (const auto& row : r.confusion)
    for (auto v : row) f << " " << v;
  f << "\n";
}

// The stored model section of a checkpoint echo must match the current
// configuration; differing keys are reported by name.
void check_config_against_checkpoint(const RunConfig& cfg, const std::string& stored_echo) {
  if (stored_echo.empty()) return;
  auto model_lines = [](const std::string& echo) {
    std::map<std::string, std::string> out;
    std::istringstream is(echo);
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("model.", 0) == 0 || line.rfind("data.source_categories", 0) == 0) {
        const auto eq = line.find('=');
        out[line.substr(0, eq)] = line.substr(eq + 1);
      }
    return out;
  };
  auto stored = model_lines(stored_echo);
  auto current = model_lines(cfg.echo());
  std::string diff;
  for (const auto& [k, v] : stored) {
    auto it = current.find(k);
    if (it == current.end() || it->second != v) diff += (diff.empty() ? "" : ", ") + k;
  }
  if (!diff.empty())
    throw std::invalid_argument("evaluate: checkpoint configuration differs from the current config in: " + diff);
}

MidnetModel<float> load_model(const RunConfig& cfg, const std::string& checkpoint_path) {
  Checkpoint<float> ck = Checkpoint<float>::load(checkpoint_path);
  auto it = ck.strings.find("config_echo");
  check_config_against_checkpoint(cfg, it == ck.strings.end() ? "" : it->second);
  MidnetModel<float> model(cfg.model, 0);
  unpack_params(model.params(), "model/", ck);
  return model;
}

int cmd_prepare(const CliOptions& opt) {
  RunConfig cfg = load_config(opt);
  auto summary = prepare_data<float>(cfg);
  std::cout << "prepared data under " << cfg.resolved_data_dir() << "\n"
            << "  train: " << summary.train_labeled << " labeled + " << summary.train_unlabeled << " unlabeled\n"
            << "  val: " << summary.validation << "\n"
            << "  t_source: " << summary.t_source << "  t_target: " << summary.t_target
            << "  t_target_new: " << summary.t_target_new << "\n";
  return 0;
}

int cmd_train(const CliOptions& opt) {
  RunConfig cfg = load_config(opt);
  auto res = fit<float>(cfg.split, cfg.model, cfg.weights, cfg.optim, cfg.resolved_data_dir(), cfg.run_dir(),
                        cfg.echo());
  std::cout << "run " << cfg.run_dir() << " finished after " << res.steps_run << " steps\n"
            << "  final checkpoint: " << res.final_checkpoint << "\n"
            << "  best checkpoint:  " << res.best_checkpoint << " (val macro_f1 " << res.best_val_f1 << " at step "
            << res.best_val_step << ")\n";
  return 0;
}

std::vector<std::string> parse_split_names(const std::string& arg) {
  if (arg == "all") return {"t_source", "t_target", "t_target_new"};
  std::vector<std::string> out;
  std::istringstream is(arg);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(tok);
  return out;
}

int cmd_evaluate(const CliOptions& opt, const std::string& checkpoint, const std::string& splits_arg) {
  RunConfig cfg = load_config(opt);
  MidnetModel<float> model = load_model(cfg, checkpoint);
  const std::string data_dir = cfg.resolved_data_dir();
  std::filesystem::create_directories(cfg.run_dir());

  for (const auto& name : parse_split_names(splits_arg)) {
    auto split = read_split<float>(data_dir, name);
    MetricsReport r = evaluate(model, split, name);
    print_metrics(r);
    write_metrics_record(std::filesystem::path(cfg.run_dir()) / ("metrics-" + name + ".txt"), r);
  }

  // domain divergence on both latent streams: source test set vs the
  // union of the target test sets
  auto src = read_split<float>(data_dir, "t_source");
  auto tgt = read_split<float>(data_dir, "t_target");
  for (auto& s : read_split<float>(data_dir, "t_target_new")) tgt.push_back(std::move(s));
  const std::uint64_t adist_seed = Rng(cfg.seed).fork(200).seed();
  auto cat = a_distance(pooled_categorical_features(model, src), pooled_categorical_features(model, tgt),
                        adist_seed, FeatureKind::categorical);
  auto dom = a_distance(pooled_domain_features(model, src), pooled_domain_features(model, tgt), adist_seed,
                        FeatureKind::domain);
  std::cout << "a_distance categorical_features " << cat.value << " (eps " << cat.classifier_error << ")\n";
  std::cout << "a_distance domain_features " << dom.value << " (eps " << dom.classifier_error << ")\n";
  std::ofstream f(std::filesystem::path(cfg.run_dir()) / "a_distance.txt");
  f << "categorical = " << cat.value << "\n"
    << "domain = " << dom.value << "\n";
  return 0;
}

int cmd_export(const CliOptions& opt, const std::string& checkpoint, const std::string& split_name,
               const std::string& out_file) {
  RunConfig cfg = load_config(opt);
  MidnetModel<float> model = load_model(cfg, checkpoint);
  auto split = read_split<float>(cfg.resolved_data_dir(), split_name);
  export_embeddings(model, split, out_file);
  std::cout << "wrote " << split.size() << " rows to " << out_file << "\n";
  return 0;
}

struct SweepCell {
  std::string name;
  std::map<std::string, std::string> overrides;
};

std::vector<SweepCell> sweep_cells(const std::string& kind, const RunConfig& base) {
  std::vector<SweepCell> cells;
  if (kind == "labeled-fraction") {
    for (double f : {0.15, 0.30, 0.60, 1.0}) {
      std::ostringstream v;
      v << f;
      cells.push_back({"frac-" + v.str(), {{"data.labeled_fraction", v.str()}}});
    }
  } else if (kind == "shared-categories") {
    for (std::size_t k = 1; k <= base.split.target_train_categories.size(); ++k) {
      std::ostringstream v;
      for (std::size_t i = 0; i < k; ++i) v << (i ? "," : "") << base.split.target_train_categories[i];
      cells.push_back({"shared-" + std::to_string(k), {{"data.target_train_categories", v.str()}}});
    }
  } else if (kind == "ablation") {
    // toggle sets; the roman-numeral tables map onto these cells as
    // documented in the readme
    auto lambda_set = [&](bool mi, bool clus, bool ssl, double eta) {
      std::map<std::string, std::string> o;
      if (!mi) o["loss.lambda3"] = "0";
      if (!clus) o["loss.lambda4"] = "0";
      if (!ssl) o["loss.lambda5"] = "0";
      std::ostringstream e;
      e << eta;
      o["loss.eta"] = e.str();
      return o;
    };
    const double eta = base.weights.eta > 0 ? base.weights.eta : 0.005;
    cells.push_back({"rec-cls", lambda_set(false, false, false, 0)});
    cells.push_back({"rec-cls-mi", lambda_set(true, false, false, 0)});
    cells.push_back({"rec-cls-clus", lambda_set(false, true, false, 0)});
    cells.push_back({"rec-cls-ssl", lambda_set(false, false, true, 0)});
    cells.push_back({"no-ssl", lambda_set(true, true, false, 0)});
    cells.push_back({"no-clus", lambda_set(true, false, true, 0)});
    cells.push_back({"no-mi", lambda_set(false, true, true, 0)});
    cells.push_back({"full", lambda_set(true, true, true, 0)});
    cells.push_back({"full-trip", lambda_set(true, true, true, eta)});
  } else {
    throw std::invalid_argument("sweep: unknown kind '" + kind +
                                "' (expected labeled-fraction, shared-categories or ablation)");
  }
  return cells;
}

int cmd_sweep(const CliOptions& opt, const std::string& kind) {
  RunConfig base = load_config(opt);
  auto cells = sweep_cells(kind, base);

  std::filesystem::create_directories(base.out_root);
  const std::string table_path = base.out_root + "/" + base.run_name + "-sweep-" + kind + ".csv";
  std::ofstream table(table_path, std::ios::trunc);
  table << "cell,f1_t_source,f1_t_target,f1_t_target_new\n";

  for (std::size_t i = 0; i < cells.size(); ++i) {
    CliOptions cell_opt = opt;
    cell_opt.sets.push_back("run.name=" + base.run_name + "-" + kind + "-" + cells[i].name);
    cell_opt.sets.push_back("run.seed=" + std::to_string(base.seed + 1 + i));
    for (const auto& [k, v] : cells[i].overrides) cell_opt.sets.push_back(k + "=" + v);
    std::cout << "=== sweep cell " << cells[i].name << "\n";
    try {
      RunConfig cfg = load_config(cell_opt);
      prepare_data<float>(cfg);
      auto res = fit<float>(cfg.split, cfg.model, cfg.weights, cfg.optim, cfg.resolved_data_dir(), cfg.run_dir(),
                            cfg.echo());
      MidnetModel<float> model = load_model(cfg, res.best_checkpoint);
      table << cells[i].name;
      for (const char* split_name : {"t_source", "t_target", "t_target_new"}) {
        auto split = read_split<float>(cfg.resolved_data_dir(), split_name);
        MetricsReport r = evaluate(model, split, split_name);
        print_metrics(r);
        table << "," << r.macro_f1;
      }
      table << "\n";
    } catch (const std::exception& e) {
      std::cerr << "sweep cell " << cells[i].name << " failed: " << e.what() << "\n";
      table << cells[i].name << ",error,error,error\n";
    }
    table.flush();
  }
  std::cout << "sweep table written to " << table_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIDNet: disentangled two-domain classification harness"};
  app.require_subcommand(1);

  CliOptions opt;
  std::string checkpoint, splits_arg{"all"}, split_name{"t_target_new"}, out_file{"embeddings.csv"}, kind;

  CLI::App* prepare = app.add_subcommand("prepare-data", "materialize splits, labels and textures to disk");
  add_common(prepare, opt);

  CLI::App* train = app.add_subcommand("train", "run the alternating optimization loop");
  add_common(train, opt);

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the test splits");
  add_common(evaluate, opt);
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--splits", splits_arg, "comma-separated split names or 'all'");

  CLI::App* exp = app.add_subcommand("export-embeddings", "write per-sample class features as csv");
  add_common(exp, opt);
  exp->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  exp->add_option("--split", split_name, "split to export");
  exp->add_option("--out-file", out_file, "destination csv");

  CLI::App* sweep = app.add_subcommand("sweep", "run a configuration grid and tabulate macro-F1");
  add_common(sweep, opt);
  sweep->add_option("--kind", kind, "labeled-fraction | shared-categories | ablation")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) return cmd_prepare(opt);
    if (train->parsed()) return cmd_train(opt);
    if (evaluate->parsed()) return cmd_evaluate(opt, checkpoint, splits_arg);
    if (exp->parsed()) return cmd_export(opt, checkpoint, split_name, out_file);
    if (sweep->parsed()) return cmd_sweep(opt, kind);
  } catch (const midnet::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

// cimil: command-line driver for synthetic data generation, training,
// evaluation and the ablation / k-sweep / decorrelation experiments.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cimil/config.hpp"
#include "cimil/eval_metrics.hpp"
#include "cimil/experiments.hpp"
#include "cimil/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Flag values collected before the config is assembled; only flags the
/// user actually passed end up in the override patch.
struct FlagValues {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out, data;

  std::string k, mode;
  bool no_stage1 = false, no_stage2 = false, no_small_bag_fallback = false;
  int epochs1 = 0, epochs2 = 0, hidden = 0;
  double lr1 = 0, lr2 = 0;
  int rff_m = 0;
  std::uint64_t rff_seed = 0;
  std::string decorr_mode;
  int decorr_steps = 0;
  double decorr_lr = 0;
  bool inprod_symmetric = false;
  int bank_t = 0;
  std::string bank_update;
  bool bank_warmup = false;
  std::string agg_variant;
  int d_a = 0, d_mlp = 0;

  int n_bags_train = 0, n_bags_test = 0, k_min = 0, k_max = 0, n = 0, signal_dims = 0;
  double pos_fraction = 0, cluster_sep = 0, confound_strength = 0;
  bool no_confound_flip = false;
};

void add_config_flags(CLI::App& app, FlagValues& f) {
  app.add_option("--config", f.config_path, "JSON run config (flags override file values)");
  app.add_option("--seed", f.seed, "Root seed");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--data", f.data, "Dataset directory (manifest.json); synthetic when omitted");

  app.add_option("--k", f.k, "Distillation scale k, or 'auto'");
  app.add_option("--mode", f.mode, "Distillation mode: topk | bipolar | auto");
  app.add_flag("--no-stage1", f.no_stage1, "Disable feature distillation");
  app.add_flag("--no-stage2", f.no_stage2, "Disable RFF-space decorrelation");
  app.add_flag("--no-small-bag-fallback", f.no_small_bag_fallback,
               "Treat bags smaller than k as an error");
  app.add_option("--epochs-stage1", f.epochs1);
  app.add_option("--lr-stage1", f.lr1);
  app.add_option("--hidden", f.hidden, "Distiller hidden width");
  app.add_option("--epochs-stage2", f.epochs2);
  app.add_option("--lr-stage2", f.lr2);
  app.add_option("--rff-m", f.rff_m, "Random Fourier samples per feature");
  app.add_option("--rff-seed", f.rff_seed);
  app.add_option("--decorr-mode", f.decorr_mode, "cov | inprod | both");
  app.add_option("--decorr-steps", f.decorr_steps);
  app.add_option("--decorr-lr", f.decorr_lr);
  app.add_flag("--inprod-symmetric", f.inprod_symmetric, "Weight both sides of the inner product");
  app.add_option("--bank-t", f.bank_t, "Memory bank capacity");
  app.add_option("--bank-update", f.bank_update, "all | drawn");
  app.add_flag("--bank-warmup", f.bank_warmup, "Fill banks with one pass before training");
  app.add_option("--agg-variant", f.agg_variant, "gated_attention | max_pool | mean_pool");
  app.add_option("--d-a", f.d_a);
  app.add_option("--d-mlp", f.d_mlp);

  app.add_option("--n-bags-train", f.n_bags_train);
  app.add_option("--n-bags-test", f.n_bags_test);
  app.add_option("--k-min", f.k_min);
  app.add_option("--k-max", f.k_max);
  app.add_option("--n", f.n, "Synthetic feature dimension");
  app.add_option("--pos-fraction", f.pos_fraction);
  app.add_option("--cluster-sep", f.cluster_sep);
  app.add_option("--confound-strength", f.confound_strength);
  app.add_flag("--no-confound-flip", f.no_confound_flip);
  app.add_option("--signal-dims", f.signal_dims);
}

bool given(const CLI::App& app, const std::string& name) { return app.count(name) > 0; }

json flag_patch(const CLI::App& app, const FlagValues& f) {
  json p = json::object();
  if (given(app, "--seed")) p["seed"] = f.seed;
  if (given(app, "--out")) p["out"] = f.out;
  if (given(app, "--data")) p["data"] = f.data;
  if (given(app, "--k")) {
    if (f.k == "auto") {
      p["k"] = "auto";
    } else {
      try {
        p["k"] = std::stoi(f.k);
      } catch (const std::exception&) {
        throw cimil::Error(cimil::ErrorCode::kInvalidConfig, "--k must be an integer or auto");
      }
    }
  }
  if (given(app, "--mode")) p["mode"] = f.mode;
  if (f.no_stage1) p["stage1"] = false;
  if (f.no_stage2) p["stage2"] = false;
  if (f.no_small_bag_fallback) p["allow_small_bags"] = false;
  if (given(app, "--epochs-stage1")) p["epochs-stage1"] = f.epochs1;
  if (given(app, "--lr-stage1")) p["lr-stage1"] = f.lr1;
  if (given(app, "--hidden")) p["distiller"]["hidden"] = f.hidden;
  if (given(app, "--epochs-stage2")) p["epochs-stage2"] = f.epochs2;
  if (given(app, "--lr-stage2")) p["lr-stage2"] = f.lr2;
  if (given(app, "--rff-m")) p["rff"]["m"] = f.rff_m;
  if (given(app, "--rff-seed")) p["rff"]["seed"] = f.rff_seed;
  if (given(app, "--decorr-mode")) p["decorr"]["mode"] = f.decorr_mode;
  if (given(app, "--decorr-steps")) p["decorr"]["steps"] = f.decorr_steps;
  if (given(app, "--decorr-lr")) p["decorr"]["lr"] = f.decorr_lr;
  if (f.inprod_symmetric) p["decorr"]["inprod_symmetric"] = true;
  if (given(app, "--bank-t")) p["bank"]["t"] = f.bank_t;
  if (given(app, "--bank-update")) p["bank"]["update_rule"] = f.bank_update;
  if (f.bank_warmup) p["bank"]["warmup"] = true;
  if (given(app, "--agg-variant")) p["agg"]["variant"] = f.agg_variant;
  if (given(app, "--d-a")) p["agg"]["d_a"] = f.d_a;
  if (given(app, "--d-mlp")) p["agg"]["d_mlp"] = f.d_mlp;
  if (given(app, "--n-bags-train")) p["synth"]["n_bags_train"] = f.n_bags_train;
  if (given(app, "--n-bags-test")) p["synth"]["n_bags_test"] = f.n_bags_test;
  if (given(app, "--k-min") || given(app, "--k-max")) {
    const cimil::SyntheticConfig defaults;
    p["synth"]["K_range"] = {given(app, "--k-min") ? f.k_min : defaults.k_min,
                             given(app, "--k-max") ? f.k_max : defaults.k_max};
  }
  if (given(app, "--n")) p["synth"]["n"] = f.n;
  if (given(app, "--pos-fraction")) p["synth"]["pos_fraction"] = f.pos_fraction;
  if (given(app, "--cluster-sep")) p["synth"]["cluster_sep"] = f.cluster_sep;
  if (given(app, "--confound-strength")) p["synth"]["confound_strength"] = f.confound_strength;
  if (f.no_confound_flip) p["synth"]["confound_flip"] = false;
  if (given(app, "--signal-dims")) p["synth"]["signal_dims"] = f.signal_dims;
  return p;
}

/// defaults <- config file <- flags
cimil::RunConfig assemble_config(const CLI::App& app, const FlagValues& f) {
  json j = cimil::to_json(cimil::RunConfig{});
  if (!f.config_path.empty()) {
    cimil::merge_json(j, cimil::to_json(cimil::load_run_config(f.config_path)));
  }
  cimil::merge_json(j, flag_patch(app, f));
  cimil::RunConfig cfg = cimil::run_config_from_json(j);
  // A file may pin k/mode; "auto" in the defaults must not mask it.
  return cfg;
}

fs::path prepare_out(const cimil::RunConfig& cfg) {
  const fs::path out = cfg.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    throw cimil::Error(cimil::ErrorCode::kIoError, "cannot create " + out.string() + ": " + ec.message());
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw cimil::Error(cimil::ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

void write_config(const fs::path& dir, const cimil::RunConfig& cfg) {
  write_text(dir / "config.json", cimil::to_json(cfg).dump(2) + "\n");
}

std::vector<std::uint64_t> seed_list(const cimil::RunConfig& cfg, const std::string& seeds,
                                     int n_seeds) {
  std::vector<std::uint64_t> out;
  if (!seeds.empty()) {
    std::stringstream ss(seeds);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw cimil::Error(cimil::ErrorCode::kInvalidConfig, "bad seed '" + item + "'");
      }
    }
  } else {
    if (n_seeds < 1) throw cimil::Error(cimil::ErrorCode::kInvalidConfig, "--n-seeds must be >= 1");
    for (int i = 0; i < n_seeds; ++i) out.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  }
  return out;
}

int cmd_synth(const cimil::RunConfig& cfg) {
  cimil::SyntheticConfig sc = cfg.synth;
  sc.seed = cimil::synth_seed_for(cfg);
  const cimil::Dataset ds = cimil::generate_synthetic(sc);
  const fs::path out = prepare_out(cfg);
  cimil::write_dataset(ds, out);
  cimil::RunConfig recorded = cfg;
  recorded.synth_seed = sc.seed;
  write_config(out, recorded);
  std::cout << "wrote " << ds.bags.size() << " bags (n=" << ds.n << ") to " << out.string() << "\n";
  return 0;
}

int cmd_train(const cimil::RunConfig& cfg) {
  const cimil::Dataset ds = cimil::materialize_dataset(cfg);
  const cimil::RunConfig resolved = cimil::resolve(cfg, ds);
  const fs::path out = prepare_out(resolved);
  write_config(out, resolved);

  std::optional<cimil::DistillerTrainResult> stage1;
  if (resolved.stage1) {
    stage1 = cimil::train_stage1(resolved, ds);
    cimil::save_distiller(stage1->model, out / "distiller.cimil");
  }
  const cimil::TrainResult result =
      cimil::train_pipeline(ds, stage1 ? &stage1->model : nullptr, resolved);
  result.bundle.save(out / "bundle.cimil");

  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  if (stage1) {
    for (std::size_t e = 0; e < stage1->loss_history.size(); ++e) {
      log << json{{"stage", 1}, {"epoch", e + 1}, {"loss", stage1->loss_history[e]}}.dump() << '\n';
    }
  }
  for (std::size_t e = 0; e < result.stats.stage2_loss.size(); ++e) {
    log << json{{"stage", 2}, {"epoch", e + 1}, {"loss", result.stats.stage2_loss[e]}}.dump() << '\n';
  }
  log << json{{"constraint_checks", result.stats.constraint_checks},
              {"constraint_violations", result.stats.constraint_violations},
              {"halvings", result.stats.halvings}}
             .dump()
      << '\n';
  std::cout << "bundle written to " << (out / "bundle.cimil").string()
            << " (constraint checks " << result.stats.constraint_checks << ", violations "
            << result.stats.constraint_violations << ")\n";
  return result.stats.constraint_violations == 0 ? 0 : 4;
}

/// Dataset for commands that consume a bundle: --data wins, then the
/// bundle's own data source.
cimil::Dataset bundle_dataset(const cimil::ModelBundle& bundle, const CLI::App& app,
                              const FlagValues& f) {
  if (given(app, "--data")) return cimil::load_dataset(f.data);
  return cimil::materialize_dataset(bundle.config);
}

int cmd_eval(const CLI::App& app, const FlagValues& f, const std::string& bundle_path,
             const std::string& split) {
  const cimil::ModelBundle bundle = cimil::ModelBundle::load(bundle_path);
  const cimil::Dataset ds = bundle_dataset(bundle, app, f);
  const cimil::EvalReport report = cimil::evaluate(bundle, ds, cimil::parse_split(split));
  cimil::RunConfig cfg = bundle.config;
  if (given(app, "--out")) cfg.out = f.out;
  const fs::path out = prepare_out(cfg);
  write_text(out / "eval_report.json", cimil::to_json(report).dump(2) + "\n");
  write_config(out, bundle.config);
  std::cout << "acc=" << report.acc << " auc=" << report.auc << " recall=" << report.recall
            << " precision=" << report.precision << " n_test=" << report.n_test << "\n";
  return 0;
}

int cmd_ablate(const cimil::RunConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  const fs::path out = prepare_out(cfg);
  write_config(out, cfg);
  const cimil::AblationResult result = cimil::run_ablation(cfg, seeds);
  std::ofstream table(out / "ablation.csv", std::ios::trunc);
  cimil::write_ablation_csv(result, table);
  std::ofstream cells(out / "ablation_cells.csv", std::ios::trunc);
  cimil::write_ablation_cells_csv(result, cells);
  cimil::write_ablation_csv(result, std::cout);
  return 0;
}

int cmd_ksweep(const cimil::RunConfig& cfg, const std::vector<int>& k_values,
               const std::vector<std::uint64_t>& seeds) {
  const fs::path out = prepare_out(cfg);
  write_config(out, cfg);
  const auto rows = cimil::run_ksweep(cfg, k_values, seeds);
  std::ofstream table(out / "ksweep.csv", std::ios::trunc);
  cimil::write_ksweep_csv(rows, table);
  cimil::write_ksweep_csv(rows, std::cout);
  return 0;
}

int cmd_decorr_bench(const CLI::App& app, const FlagValues& f, const std::string& bundle_path,
                     int batch_size, int steps, double lr) {
  const cimil::ModelBundle bundle = cimil::ModelBundle::load(bundle_path);
  const cimil::Dataset ds = bundle_dataset(bundle, app, f);
  cimil::DecorrOptions opts = bundle.config.decorr;
  if (given(app, "--decorr-mode")) opts.mode = cimil::parse_decorr_mode(f.decorr_mode);
  if (f.inprod_symmetric) opts.inprod_symmetric = true;
  opts.steps = steps;
  opts.lr = lr;
  const cimil::CorrelationReport report = cimil::correlation_report(bundle, ds, batch_size, opts);

  cimil::RunConfig cfg = bundle.config;
  if (given(app, "--out")) cfg.out = f.out;
  const fs::path out = prepare_out(cfg);
  json summary = cimil::to_json(report);
  summary["batch_size"] = batch_size;
  summary["steps"] = steps;
  summary["lr"] = lr;
  summary["mode"] = cimil::to_string(opts.mode);
  write_text(out / "correlation_report.json", summary.dump(2) + "\n");
  std::ofstream csv(out / "correlation_per_bag.csv", std::ios::trunc);
  csv << "id,split,before,after\n" << std::setprecision(10);
  for (const auto& row : report.per_bag) {
    csv << row.id << ',' << cimil::to_string(row.split) << ',' << row.before << ',' << row.after
        << '\n';
  }
  write_config(out, bundle.config);
  std::cout << "train ratio=" << report.train.reduction_ratio
            << " test ratio=" << report.test.reduction_ratio << "\n";
  return 0;
}

int cmd_roi(const CLI::App& app, const FlagValues& f, const std::string& bundle_path) {
  const cimil::ModelBundle bundle = cimil::ModelBundle::load(bundle_path);
  const cimil::Dataset ds = bundle_dataset(bundle, app, f);
  const auto sets = cimil::distill_all(bundle, ds);
  json bags = json::array();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const cimil::Bag& bag = ds.bags[i];
    const cimil::DistilledSet& s = sets[i];
    json entry{{"bag_id", s.bag_id},
               {"split", cimil::to_string(bag.split)},
               {"bag_label", bag.bag_label},
               {"mode", cimil::to_string(s.mode)},
               {"indices", s.indices},
               {"probs", std::vector<double>(s.probs.data(), s.probs.data() + s.probs.size())}};
    if (bag.latent_labels) {
      const cimil::RoiMetrics m = cimil::roi_metrics(s, bag);
      entry["roi_precision"] = m.precision;
      entry["roi_recall"] = m.recall;
    }
    bags.push_back(std::move(entry));
  }
  cimil::RunConfig cfg = bundle.config;
  if (given(app, "--out")) cfg.out = f.out;
  const fs::path out = prepare_out(cfg);
  write_text(out / "roi.json", json{{"bags", bags}}.dump(1) + "\n");
  write_config(out, bundle.config);
  std::cout << "wrote " << sets.size() << " distilled sets to " << (out / "roi.json").string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cimil: causal-decorrelation multiple instance learning"};
  app.require_subcommand(1);
  FlagValues flags;
  add_config_flags(app, flags);

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset directory");
  auto* train = app.add_subcommand("train", "Train both stages and write a model bundle");

  std::string bundle_path, split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a bundle, write eval_report.json");
  eval->add_option("--bundle", bundle_path, "Model bundle file")->required();
  eval->add_option("--split", split, "train | test");

  std::string seeds;
  int n_seeds = 1;
  auto* ablate = app.add_subcommand("ablate", "Stage on/off ablation grid");
  ablate->add_option("--seeds", seeds, "Comma-separated seeds");
  ablate->add_option("--n-seeds", n_seeds, "Use seeds seed..seed+S-1");

  std::vector<int> k_list;
  auto* ksweep = app.add_subcommand("ksweep", "Distillation scale sweep");
  ksweep->add_option("--k-list", k_list, "k values")->delimiter(',')->required();
  ksweep->add_option("--seeds", seeds, "Comma-separated seeds");
  ksweep->add_option("--n-seeds", n_seeds, "Use seeds seed..seed+S-1");

  int batch_size = 32, bench_steps = 200;
  double bench_lr = 0.5;
  auto* bench = app.add_subcommand("decorr-bench", "Correlation before/after reweighting");
  bench->add_option("--bundle", bundle_path, "Model bundle file")->required();
  bench->add_option("--batch-size", batch_size, "Instances per bag batch");
  bench->add_option("--steps", bench_steps, "Weight optimization steps");
  bench->add_option("--lr", bench_lr, "Weight optimization step size");

  auto* roi = app.add_subcommand("roi", "Dump distilled instances per bag");
  roi->add_option("--bundle", bundle_path, "Model bundle file")->required();

  for (CLI::App* sub : {synth, train, eval, ablate, ksweep, bench, roi}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const cimil::RunConfig cfg = assemble_config(app, flags);
    if (*synth) return cmd_synth(cfg);
    if (*train) return cmd_train(cfg);
    if (*eval) return cmd_eval(app, flags, bundle_path, split);
    if (*ablate) return cmd_ablate(cfg, seed_list(cfg, seeds, n_seeds));
    if (*ksweep) return cmd_ksweep(cfg, k_list, seed_list(cfg, seeds, n_seeds));
    if (*bench) return cmd_decorr_bench(app, flags, bundle_path, batch_size, bench_steps, bench_lr);
    if (*roi) return cmd_roi(app, flags, bundle_path);
  } catch (const cimil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cimil::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

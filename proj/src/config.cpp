#include "cimil/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace cimil {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + where + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, "config key '" + where + key + "': " + e.what());
  }
}

void read_optional_seed(const json& j, const char* key, std::optional<std::uint64_t>& out,
                        const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  std::uint64_t value = 0;
  read(j, key, value, where);
  out = value;
}

json optional_seed(const std::optional<std::uint64_t>& seed) {
  return seed ? json(*seed) : json(nullptr);
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (k < 0) fail("k must be >= 1 or auto");
  if (mode == DistillMode::kBipolar && k > 0 && k % 2 != 0) fail("bipolar mode needs an even k");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) fail("epochs must be >= 0");
  if (!(lr_stage1 >= 0.0) || !(lr_stage2 >= 0.0)) fail("learning rates must be >= 0");
  if (hidden_stage1 < 1) fail("distiller.hidden must be >= 1");
  if (rff_m < 1) fail("rff.m must be >= 1");
  if (decorr.steps < 0) fail("decorr.steps must be >= 0");
  if (!(decorr.lr >= 0.0)) fail("decorr.lr must be >= 0");
  if (bank_t < 1) fail("bank.t must be >= 1");
  if (agg_d_a < 1 || agg_d_mlp < 1) fail("agg dimensions must be >= 1");
  if (data.empty()) synth.validate();
}

json to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["data"] = cfg.data;
  j["out"] = cfg.out;
  j["k"] = cfg.k > 0 ? json(cfg.k) : json("auto");
  j["mode"] = cfg.mode ? json(to_string(*cfg.mode)) : json("auto");
  j["allow_small_bags"] = cfg.allow_small_bags;
  j["stage1"] = cfg.stage1;
  j["stage2"] = cfg.stage2;
  j["epochs-stage1"] = cfg.epochs_stage1;
  j["lr-stage1"] = cfg.lr_stage1;
  j["epochs-stage2"] = cfg.epochs_stage2;
  j["lr-stage2"] = cfg.lr_stage2;
  j["distiller"] = {{"hidden", cfg.hidden_stage1}, {"momentum", cfg.momentum_stage1}};
  j["rff"] = {{"m", cfg.rff_m}, {"seed", optional_seed(cfg.rff_seed)}};
  j["decorr"] = {{"mode", to_string(cfg.decorr.mode)},
                 {"steps", cfg.decorr.steps},
                 {"lr", cfg.decorr.lr},
                 {"inprod_symmetric", cfg.decorr.inprod_symmetric}};
  j["bank"] = {{"t", cfg.bank_t},
               {"update_rule", to_string(cfg.bank_rule)},
               {"warmup", cfg.bank_warmup}};
  j["agg"] = {{"variant", to_string(cfg.agg_variant)},
              {"d_a", cfg.agg_d_a},
              {"d_mlp", cfg.agg_d_mlp},
              {"momentum", cfg.momentum_stage2}};
  const SyntheticConfig& s = cfg.synth;
  j["synth"] = {{"n_bags_train", s.n_bags_train},
                {"n_bags_test", s.n_bags_test},
                {"K_range", {s.k_min, s.k_max}},
                {"n", s.n},
                {"pos_fraction", s.pos_fraction},
                {"cluster_sep", s.cluster_sep},
                {"confound_strength", s.confound_strength},
                {"confound_flip", s.confound_flip},
                {"signal_dims", s.signal_dims},
                {"seed", optional_seed(cfg.synth_seed)}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  reject_unknown(j,
                 {"seed", "data", "out", "k", "mode", "allow_small_bags", "stage1", "stage2",
                  "epochs-stage1", "lr-stage1", "epochs-stage2", "lr-stage2", "distiller", "rff",
                  "decorr", "bank", "agg", "synth"},
                 "");
  read(j, "seed", cfg.seed, "");
  read(j, "data", cfg.data, "");
  read(j, "out", cfg.out, "");
  if (j.contains("k")) {
    const json& k = j.at("k");
    if (k.is_string()) {
      if (k.get<std::string>() != "auto") {
        throw Error(ErrorCode::kInvalidConfig, "config key 'k' must be an integer or \"auto\"");
      }
      cfg.k = 0;
    } else {
      read(j, "k", cfg.k, "");
      if (cfg.k < 1) throw Error(ErrorCode::kInvalidConfig, "k must be >= 1");
    }
  }
  if (j.contains("mode")) {
    std::string mode;
    read(j, "mode", mode, "");
    if (mode == "auto") {
      cfg.mode.reset();
    } else {
      cfg.mode = parse_distill_mode(mode);
    }
  }
  read(j, "allow_small_bags", cfg.allow_small_bags, "");
  read(j, "stage1", cfg.stage1, "");
  read(j, "stage2", cfg.stage2, "");
  read(j, "epochs-stage1", cfg.epochs_stage1, "");
  read(j, "lr-stage1", cfg.lr_stage1, "");
  read(j, "epochs-stage2", cfg.epochs_stage2, "");
  read(j, "lr-stage2", cfg.lr_stage2, "");

  if (j.contains("distiller")) {
    const json& d = j.at("distiller");
    reject_unknown(d, {"hidden", "momentum"}, "distiller.");
    read(d, "hidden", cfg.hidden_stage1, "distiller.");
    read(d, "momentum", cfg.momentum_stage1, "distiller.");
  }
  if (j.contains("rff")) {
    const json& r = j.at("rff");
    reject_unknown(r, {"m", "seed"}, "rff.");
    read(r, "m", cfg.rff_m, "rff.");
    read_optional_seed(r, "seed", cfg.rff_seed, "rff.");
  }
  if (j.contains("decorr")) {
    const json& d = j.at("decorr");
    reject_unknown(d, {"mode", "steps", "lr", "inprod_symmetric"}, "decorr.");
    if (d.contains("mode")) {
      std::string mode;
      read(d, "mode", mode, "decorr.");
      cfg.decorr.mode = parse_decorr_mode(mode);
    }
    read(d, "steps", cfg.decorr.steps, "decorr.");
    read(d, "lr", cfg.decorr.lr, "decorr.");
    read(d, "inprod_symmetric", cfg.decorr.inprod_symmetric, "decorr.");
  }
  if (j.contains("bank")) {
    const json& b = j.at("bank");
    reject_unknown(b, {"t", "update_rule", "warmup"}, "bank.");
    read(b, "t", cfg.bank_t, "bank.");
    if (b.contains("update_rule")) {
      std::string rule;
      read(b, "update_rule", rule, "bank.");
      cfg.bank_rule = parse_bank_update_rule(rule);
    }
    read(b, "warmup", cfg.bank_warmup, "bank.");
  }
  if (j.contains("agg")) {
    const json& a = j.at("agg");
    reject_unknown(a, {"variant", "d_a", "d_mlp", "momentum"}, "agg.");
    if (a.contains("variant")) {
      std::string variant;
      read(a, "variant", variant, "agg.");
      cfg.agg_variant = parse_aggregator_variant(variant);
    }
    read(a, "d_a", cfg.agg_d_a, "agg.");
    read(a, "d_mlp", cfg.agg_d_mlp, "agg.");
    read(a, "momentum", cfg.momentum_stage2, "agg.");
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    reject_unknown(s,
                   {"n_bags_train", "n_bags_test", "K_range", "n", "pos_fraction", "cluster_sep",
                    "confound_strength", "confound_flip", "signal_dims", "seed"},
                   "synth.");
    SyntheticConfig& sc = cfg.synth;
    read(s, "n_bags_train", sc.n_bags_train, "synth.");
    read(s, "n_bags_test", sc.n_bags_test, "synth.");
    if (s.contains("K_range")) {
      std::vector<int> range;
      read(s, "K_range", range, "synth.");
      if (range.size() != 2) {
        throw Error(ErrorCode::kInvalidConfig, "synth.K_range must be [min, max]");
      }
      sc.k_min = range[0];
      sc.k_max = range[1];
    }
    read(s, "n", sc.n, "synth.");
    read(s, "pos_fraction", sc.pos_fraction, "synth.");
    read(s, "cluster_sep", sc.cluster_sep, "synth.");
    read(s, "confound_strength", sc.confound_strength, "synth.");
    read(s, "confound_flip", sc.confound_flip, "synth.");
    read(s, "signal_dims", sc.signal_dims, "synth.");
    read_optional_seed(s, "seed", cfg.synth_seed, "synth.");
  }
  return cfg;
}

void merge_json(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      merge_json(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidConfig, "cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config file is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

std::uint64_t synth_seed_for(const RunConfig& cfg) {
  return cfg.synth_seed ? *cfg.synth_seed : derive_seed(cfg.seed, "data");
}

Dataset materialize_dataset(const RunConfig& cfg) {
  if (!cfg.data.empty()) return load_dataset(cfg.data);
  SyntheticConfig sc = cfg.synth;
  sc.seed = synth_seed_for(cfg);
  return generate_synthetic(sc);
}

RunConfig resolve(RunConfig cfg, const Dataset& dataset) {
  if (!cfg.mode) {
    cfg.mode = dataset.task_mode == TaskMode::kSubtype ? DistillMode::kBipolar : DistillMode::kTopK;
  }
  if (cfg.k == 0) cfg.k = dataset.min_bag_size() >= 1000 ? 64 : 32;
  if (!cfg.rff_seed) cfg.rff_seed = derive_seed(cfg.seed, "rff");
  if (cfg.data.empty() && !cfg.synth_seed) cfg.synth_seed = derive_seed(cfg.seed, "data");
  cfg.validate();
  return cfg;
}

std::string config_hash(const json& resolved) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(resolved.dump());
  return out.str();
}

}  // namespace cimil

#include "cimil/experiments.hpp"

#include <cmath>
#include <iomanip>
#include <optional>

#include "cimil/pipeline.hpp"

namespace cimil {

using nlohmann::json;

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::string seeds_hash(const RunConfig& resolved, const std::vector<std::uint64_t>& seeds) {
  json j = to_json(resolved);
  j["seed"] = seeds;
  // Per-seed derived values would make the hash seed-specific.
  j["rff"]["seed"] = nullptr;
  j["synth"]["seed"] = nullptr;
  return config_hash(j);
}

const char* mark(bool on) { return on ? "1" : "0"; }

}  // namespace

AblationResult run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw Error(ErrorCode::kInvalidConfig, "ablation needs at least one seed");
  constexpr bool kConditions[4][2] = {{false, false}, {true, false}, {false, true}, {true, true}};

  AblationResult result;
  std::vector<double> acc[4], auc_values[4];
  std::string hashes[4];
  for (std::uint64_t seed : seeds) {
    RunConfig cfg = base;
    cfg.seed = seed;
    const Dataset dataset = materialize_dataset(cfg);
    const RunConfig resolved = resolve(cfg, dataset);
    std::optional<DistillerTrainResult> stage1;

    for (int c = 0; c < 4; ++c) {
      RunConfig cond = resolved;
      cond.stage1 = kConditions[c][0];
      cond.stage2 = kConditions[c][1];
      if (cond.stage1 && !stage1) stage1 = train_stage1(cond, dataset);
      const TrainResult trained =
          train_pipeline(dataset, cond.stage1 ? &stage1->model : nullptr, cond);
      const EvalReport report = evaluate(trained.bundle, dataset, Split::kTest);
      result.cells.push_back({cond.stage1, cond.stage2, seed, report.acc, report.auc,
                              config_hash(to_json(cond))});
      acc[c].push_back(report.acc);
      auc_values[c].push_back(report.auc);
      if (hashes[c].empty()) hashes[c] = seeds_hash(cond, seeds);
    }
  }
  for (int c = 0; c < 4; ++c) {
    const MeanStd a = mean_std(acc[c]);
    const MeanStd u = mean_std(auc_values[c]);
    result.rows.push_back({kConditions[c][0], kConditions[c][1], a.mean, a.std, u.mean, u.std,
                           static_cast<int>(seeds.size()), hashes[c]});
  }
  return result;
}

std::vector<KSweepRow> run_ksweep(const RunConfig& base, const std::vector<int>& k_values,
                                  const std::vector<std::uint64_t>& seeds) {
  if (k_values.empty() || seeds.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "k-sweep needs at least one k and one seed");
  }
  std::vector<KSweepRow> rows;
  for (std::uint64_t seed : seeds) {
    RunConfig cfg = base;
    cfg.seed = seed;
    const Dataset dataset = materialize_dataset(cfg);
    for (int k : k_values) {
      KSweepRow row;
      row.k = k;
      row.seed = seed;
      try {
        RunConfig run = cfg;
        run.k = k;
        const RunConfig resolved = resolve(run, dataset);
        row.config_hash = config_hash(to_json(resolved));
        const TrainResult trained = train_full(resolved, dataset);
        const EvalReport report = evaluate(trained.bundle, dataset, Split::kTest);
        row.ok = true;
        row.acc = report.acc;
        row.auc = report.auc;
      } catch (const Error& e) {
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace {

std::string csv_escape(const std::string& text) {
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_ablation_csv(const AblationResult& result, std::ostream& out) {
  out << "stage1,stage2,acc_mean,acc_std,auc_mean,auc_std,n_seeds,config_hash\n";
  out << std::setprecision(10);
  for (const AblationRow& r : result.rows) {
    out << mark(r.stage1) << ',' << mark(r.stage2) << ',' << r.acc_mean << ',' << r.acc_std << ','
        << r.auc_mean << ',' << r.auc_std << ',' << r.n_seeds << ',' << r.config_hash << '\n';
  }
}

void write_ablation_cells_csv(const AblationResult& result, std::ostream& out) {
  out << "stage1,stage2,seed,acc,auc,config_hash\n";
  out << std::setprecision(10);
  for (const AblationCell& c : result.cells) {
    out << mark(c.stage1) << ',' << mark(c.stage2) << ',' << c.seed << ',' << c.acc << ','
        << c.auc << ',' << c.config_hash << '\n';
  }
}

void write_ksweep_csv(const std::vector<KSweepRow>& rows, std::ostream& out) {
  out << "k,seed,status,acc,auc,config_hash,error\n";
  out << std::setprecision(10);
  for (const KSweepRow& r : rows) {
    out << r.k << ',' << r.seed << ',' << (r.ok ? "ok" : "error") << ',';
    if (r.ok) {
      out << r.acc << ',' << r.auc;
    } else {
      out << ',';
    }
    out << ',' << r.config_hash << ',' << csv_escape(r.error) << '\n';
  }
}

}  // namespace cimil

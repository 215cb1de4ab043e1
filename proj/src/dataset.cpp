#include "cimil/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cimil {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Split split) noexcept {
  return split == Split::kTrain ? "train" : "test";
}

const char* to_string(TaskMode mode) noexcept {
  return mode == TaskMode::kBenignMalignant ? "benign_malignant" : "subtype";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  throw Error(ErrorCode::kBadFormat, "unknown split '" + text + "'");
}

TaskMode parse_task_mode(const std::string& text) {
  if (text == "benign_malignant") return TaskMode::kBenignMalignant;
  if (text == "subtype") return TaskMode::kSubtype;
  throw Error(ErrorCode::kUnknownTaskMode, "unknown task_mode '" + text + "'");
}

std::vector<const Bag*> Dataset::split(Split which) const {
  std::vector<const Bag*> out;
  for (const Bag& bag : bags) {
    if (bag.split == which) out.push_back(&bag);
  }
  return out;
}

int Dataset::min_bag_size() const {
  int best = 0;
  for (const Bag& bag : bags) {
    best = best == 0 ? bag.size() : std::min(best, bag.size());
  }
  return best;
}

int compute_bag_label(const std::vector<int>& latent_labels) {
  if (latent_labels.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty bag");
  }
  for (int y : latent_labels) {
    if (y != 0 && y != 1) {
      throw Error(ErrorCode::kInvalidArgument, "latent labels must be 0 or 1");
    }
  }
  return std::any_of(latent_labels.begin(), latent_labels.end(),
                     [](int y) { return y == 1; })
             ? 1
             : 0;
}

void validate_bag(const Bag& bag) {
  if (bag.size() < 1) {
    throw Error(ErrorCode::kDimensionMismatch, "bag '" + bag.id + "' is empty");
  }
  if (!bag.features.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "bag '" + bag.id + "' has non-finite features");
  }
  if (bag.bag_label != 0 && bag.bag_label != 1) {
    throw Error(ErrorCode::kBadFormat, "bag '" + bag.id + "' label must be 0 or 1");
  }
  if (bag.latent_labels) {
    if (static_cast<int>(bag.latent_labels->size()) != bag.size()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "bag '" + bag.id + "': latent_labels length differs from K");
    }
    if (compute_bag_label(*bag.latent_labels) != bag.bag_label) {
      throw Error(ErrorCode::kLabelInconsistent,
                  "bag '" + bag.id + "': label inconsistent with latent instance labels");
    }
  }
}

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, "synthetic config: " + what);
  };
  if (n_bags_train < 0 || n_bags_test < 0) fail("bag counts must be >= 0");
  if (n_bags_train + n_bags_test == 0) fail("at least one bag required");
  if (k_min < 1) fail("K_range.min must be >= 1");
  if (k_max < k_min) fail("K_range.max must be >= K_range.min");
  if (n < 1) fail("n must be >= 1");
  if (!(pos_fraction > 0.0 && pos_fraction <= 1.0)) fail("pos_fraction must be in (0, 1]");
  if (!(cluster_sep >= 0.0) || !std::isfinite(cluster_sep)) fail("cluster_sep must be >= 0");
  if (!std::isfinite(confound_strength)) fail("confound_strength must be finite");
  if (signal_dims < 1) fail("signal_dims must be >= 1");
}

namespace {

Bag make_synthetic_bag(const SyntheticConfig& cfg, Rng& rng, Split split, int index) {
  std::uniform_int_distribution<int> size_dist(cfg.k_min, cfg.k_max);
  std::normal_distribution<double> noise(0.0, 1.0);

  Bag bag;
  bag.split = split;
  std::ostringstream id;
  id << to_string(split) << '_' << std::setw(4) << std::setfill('0') << index;
  bag.id = id.str();
  bag.bag_label = index % 2 == 0 ? 1 : 0;

  const int k = size_dist(rng);
  const int n = cfg.n;
  std::vector<int> latent(k, 0);
  if (bag.bag_label == 1) {
    const int n_pos = std::min(k, static_cast<int>(std::ceil(cfg.pos_fraction * k - 1e-12)));
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < n_pos; ++i) latent[order[i]] = 1;
  }

  const int confound_dim = n - 1;
  const int signal_dims = n > 1 ? std::min(cfg.signal_dims, n - 1) : 1;
  const double signal_shift = cfg.cluster_sep / std::sqrt(static_cast<double>(signal_dims));
  int confound_on = bag.bag_label;
  if (split == Split::kTest && cfg.confound_flip) confound_on = 1 - bag.bag_label;
  const double confound_shift = cfg.confound_strength * confound_on;

  bag.features.resize(k, n);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) bag.features(i, j) = noise(rng);
    if (latent[i] == 1) {
      for (int j = 0; j < signal_dims; ++j) bag.features(i, j) += signal_shift;
    }
    bag.features(i, confound_dim) += confound_shift;
  }
  round_to_float(bag.features);
  bag.latent_labels = std::move(latent);
  return bag;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Dataset ds;
  ds.n = cfg.n;
  ds.task_mode = TaskMode::kBenignMalignant;
  for (int i = 0; i < cfg.n_bags_train; ++i) {
    ds.bags.push_back(make_synthetic_bag(cfg, rng, Split::kTrain, i));
  }
  for (int i = 0; i < cfg.n_bags_test; ++i) {
    ds.bags.push_back(make_synthetic_bag(cfg, rng, Split::kTest, i));
  }
  return ds;
}

void append_f32_le(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

double read_f32_le(const char* bytes) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[b])) << (8 * b);
  }
  return static_cast<double>(std::bit_cast<float>(bits));
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) {
    throw Error(ErrorCode::kBadFormat, where + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadFormat, where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

Dataset load_dataset(const fs::path& dir_or_manifest) {
  fs::path manifest_path = dir_or_manifest;
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw Error(ErrorCode::kMissingFile, "manifest not found: " + manifest_path.string());
  }
  const fs::path root = manifest_path.parent_path();

  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kBadFormat, std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::string where = manifest_path.string();
  if (require<int>(manifest, "version", where) != 1) {
    throw Error(ErrorCode::kBadFormat, "unsupported manifest version");
  }

  Dataset ds;
  ds.n = require<int>(manifest, "n", where);
  if (ds.n < 1) throw Error(ErrorCode::kBadFormat, "manifest n must be >= 1");
  ds.task_mode = parse_task_mode(require<std::string>(manifest, "task_mode", where));

  const json& bags = manifest.at("bags");
  for (const json& entry : bags) {
    Bag bag;
    bag.id = require<std::string>(entry, "id", where);
    const std::string bag_where = where + " bag '" + bag.id + "'";
    bag.split = parse_split(require<std::string>(entry, "split", bag_where));
    bag.bag_label = require<int>(entry, "bag_label", bag_where);
    const int k = require<int>(entry, "K", bag_where);
    if (k < 1) throw Error(ErrorCode::kDimensionMismatch, bag_where + ": K must be >= 1");

    const fs::path features_path = root / require<std::string>(entry, "features_file", bag_where);
    if (!fs::exists(features_path)) {
      throw Error(ErrorCode::kMissingFile, "features file not found: " + features_path.string());
    }
    const std::string raw = read_file(features_path);
    const std::size_t expected = static_cast<std::size_t>(k) * ds.n * 4;
    if (raw.size() != expected) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "dimension mismatch: " + bag_where + " declares K=" + std::to_string(k) +
                      ", n=" + std::to_string(ds.n) + " (" + std::to_string(expected) +
                      " bytes) but file holds " + std::to_string(raw.size()) + " bytes");
    }
    bag.features.resize(k, ds.n);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < ds.n; ++j) {
        bag.features(i, j) = read_f32_le(raw.data() + 4 * (static_cast<std::size_t>(i) * ds.n + j));
      }
    }
    if (entry.contains("latent_labels") && !entry.at("latent_labels").is_null()) {
      bag.latent_labels = require<std::vector<int>>(entry, "latent_labels", bag_where);
    }
    validate_bag(bag);
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["version"] = 1;
  manifest["n"] = dataset.n;
  manifest["task_mode"] = to_string(dataset.task_mode);
  manifest["bags"] = json::array();
  for (const Bag& bag : dataset.bags) {
    if (bag.dim() != dataset.n) {
      throw Error(ErrorCode::kDimensionMismatch, "bag '" + bag.id + "' has wrong feature dimension");
    }
    const std::string rel = "features/" + bag.id + ".f32";
    std::string payload;
    payload.reserve(static_cast<std::size_t>(bag.size()) * bag.dim() * 4);
    for (int i = 0; i < bag.size(); ++i) {
      for (int j = 0; j < bag.dim(); ++j) append_f32_le(payload, bag.features(i, j));
    }
    std::ofstream out(dir / rel, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + (dir / rel).string());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));

    json entry{{"id", bag.id},
               {"split", to_string(bag.split)},
               {"bag_label", bag.bag_label},
               {"K", bag.size()},
               {"features_file", rel}};
    if (bag.latent_labels) entry["latent_labels"] = *bag.latent_labels;
    manifest["bags"].push_back(std::move(entry));
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write manifest in " + dir.string());
  out << manifest.dump(1) << '\n';
}

}  // namespace cimil

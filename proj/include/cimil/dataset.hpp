#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cimil/common.hpp"

namespace cimil {

enum class Split { kTrain, kTest };
enum class TaskMode { kBenignMalignant, kSubtype };

const char* to_string(Split split) noexcept;
const char* to_string(TaskMode mode) noexcept;
Split parse_split(const std::string& text);
TaskMode parse_task_mode(const std::string& text);

/// One bag of instance features. Rows are instances, columns feature
/// dimensions. Latent labels are ground truth kept for evaluation only;
/// no training path reads them.
struct Bag {
  std::string id;
  Matrix features;  // K x n
  int bag_label = 0;
  std::optional<std::vector<int>> latent_labels;
  Split split = Split::kTrain;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

struct Dataset {
  std::vector<Bag> bags;
  int n = 0;
  TaskMode task_mode = TaskMode::kBenignMalignant;

  std::vector<const Bag*> split(Split which) const;
  int min_bag_size() const;
};

struct SyntheticConfig {
  int n_bags_train = 200;
  int n_bags_test = 100;
  int k_min = 100;
  int k_max = 300;
  int n = 64;
  double pos_fraction = 0.1;
  double cluster_sep = 3.0;
  double confound_strength = 2.0;
  bool confound_flip = true;
  // The positive-cluster mean is spread evenly over this many leading
  // coordinates; the confound lives on the last coordinate.
  int signal_dims = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// 1 iff at least one instance is positive.
int compute_bag_label(const std::vector<int>& latent_labels);

void validate_bag(const Bag& bag);

Dataset generate_synthetic(const SyntheticConfig& cfg);

/// Reads `<dir>/manifest.json` and the raw f32 feature files it lists.
Dataset load_dataset(const std::filesystem::path& dir_or_manifest);

/// Writes the directory format read by load_dataset. Features are stored
/// as little-endian f32; callers that need an exact round trip keep
/// features f32-representable (generate_synthetic does).
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Raw little-endian f32 helpers shared with the bundle container.
void append_f32_le(std::string& out, double value);
double read_f32_le(const char* bytes);

}  // namespace cimil

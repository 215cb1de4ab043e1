#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cimil/common.hpp"

namespace cimil {

/// Versioned tensor container used for distiller checkpoints and model
/// bundles.
///
/// Layout (all integers little-endian):
///   bytes 0..7   magic "CIMILTNS"
///   bytes 8..11  u32 container version (1)
///   bytes 12..19 u64 header length H
///   next H bytes UTF-8 JSON header:
///                {"version": 1, "kind": ..., "meta": {...},
///                 "tensors": [{"name", "shape", "dtype": "f32", "offset", "nbytes"}]}
///   remainder    tensor payload, f32 row-major, offsets relative to the
///                payload start
class TensorFile {
 public:
  static constexpr std::uint32_t kVersion = 1;

  explicit TensorFile(std::string kind = "") : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void put(const std::string& name, const Matrix& value);
  void put(const std::string& name, const Vector& value);

  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  Matrix matrix(const std::string& name) const;
  Vector vector(const std::string& name) const;

  std::string serialize() const;
  static TensorFile deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorFile load(const std::filesystem::path& path);

 private:
  struct Entry {
    std::vector<std::int64_t> shape;
    Matrix data;  // vectors stored as n x 1
  };

  std::string kind_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<std::string> order_;
  std::map<std::string, Entry> tensors_;
};

}  // namespace cimil

#include "cimil/tensor_file.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "cimil/dataset.hpp"

namespace cimil {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'I', 'M', 'I', 'L', 'T', 'N', 'S'};

void append_uint(std::string& out, std::uint64_t value, int bytes) {
  for (int b = 0; b < bytes; ++b) out.push_back(static_cast<char>((value >> (8 * b)) & 0xffu));
}

std::uint64_t read_uint(const std::string& in, std::size_t offset, int bytes) {
  std::uint64_t value = 0;
  for (int b = 0; b < bytes; ++b) {
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  }
  return value;
}

}  // namespace

void TensorFile::put(const std::string& name, const Matrix& value) {
  if (!tensors_.count(name)) order_.push_back(name);
  tensors_[name] = {{value.rows(), value.cols()}, value};
}

void TensorFile::put(const std::string& name, const Vector& value) {
  if (!tensors_.count(name)) order_.push_back(name);
  tensors_[name] = {{value.size()}, Matrix(value)};
}

Matrix TensorFile::matrix(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorCode::kBadFormat, "missing tensor '" + name + "'");
  return it->second.data;
}

Vector TensorFile::vector(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorCode::kBadFormat, "missing tensor '" + name + "'");
  if (it->second.shape.size() != 1) {
    throw Error(ErrorCode::kBadFormat, "tensor '" + name + "' is not a vector");
  }
  return it->second.data.col(0);
}

std::string TensorFile::serialize() const {
  std::string payload;
  json tensors = json::array();
  for (const std::string& name : order_) {
    const Entry& e = tensors_.at(name);
    const std::size_t offset = payload.size();
    for (Eigen::Index r = 0; r < e.data.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.data.cols(); ++c) append_f32_le(payload, e.data(r, c));
    }
    tensors.push_back({{"name", name},
                       {"shape", e.shape},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"nbytes", payload.size() - offset}});
  }
  const json header{{"version", kVersion}, {"kind", kind_}, {"meta", meta_}, {"tensors", tensors}};
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  append_uint(out, kVersion, 4);
  append_uint(out, header_text.size(), 8);
  out += header_text;
  out += payload;
  return out;
}

TensorFile TensorFile::deserialize(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kBadFormat, "not a tensor container (bad magic)");
  }
  if (read_uint(bytes, 8, 4) != kVersion) {
    throw Error(ErrorCode::kBadFormat, "unsupported tensor container version");
  }
  const std::uint64_t header_len = read_uint(bytes, 12, 8);
  if (20 + header_len > bytes.size()) throw Error(ErrorCode::kBadFormat, "truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(20, header_len));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kBadFormat, std::string("bad container header: ") + e.what());
  }
  const std::size_t payload_start = 20 + header_len;

  TensorFile file(header.value("kind", std::string()));
  file.meta_ = header.value("meta", json::object());
  for (const json& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<std::int64_t>>();
    if (t.at("dtype").get<std::string>() != "f32") {
      throw Error(ErrorCode::kBadFormat, "tensor '" + name + "' has unsupported dtype");
    }
    const auto offset = t.at("offset").get<std::size_t>();
    const std::int64_t rows = shape.empty() ? 1 : shape[0];
    const std::int64_t cols = shape.size() > 1 ? shape[1] : 1;
    if (shape.size() > 2 || rows < 0 || cols < 0) {
      throw Error(ErrorCode::kBadFormat, "tensor '" + name + "' has unsupported shape");
    }
    const std::size_t nbytes = static_cast<std::size_t>(rows * cols) * 4;
    if (payload_start + offset + nbytes > bytes.size()) {
      throw Error(ErrorCode::kBadFormat, "tensor '" + name + "' is truncated");
    }
    Matrix data(rows, cols);
    const char* base = bytes.data() + payload_start + offset;
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) data(r, c) = read_f32_le(base + 4 * (r * cols + c));
    }
    file.order_.push_back(name);
    file.tensors_[name] = {shape, std::move(data)};
  }
  return file;
}

void TensorFile::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace cimil

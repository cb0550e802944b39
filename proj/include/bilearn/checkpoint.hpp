#pragma once

// Self-describing binary container: magic, a JSON header listing every tensor
// (name, dtype, shape, byte offset) plus free-form metadata, then raw
// little-endian payloads. Round-trips bit-exactly.

#include "bilearn/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>

namespace bilearn {

class Checkpoint {
 public:
  enum class DType { kF32, kF64, kI32 };

  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const Matrix<float>& m);
  void put(const std::string& name, const Matrix<double>& m);
  void put(const std::string& name, const std::vector<std::int32_t>& values);

  bool has(const std::string& name) const { return tensors_.contains(name); }
  Matrix<float> f32(const std::string& name) const;
  Matrix<double> f64(const std::string& name) const;
  std::vector<std::int32_t> i32(const std::string& name) const;

  /// Writes to a sibling temp file and renames it into place.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  bool operator==(const Checkpoint& other) const;

 private:
  struct Tensor {
    DType dtype = DType::kF32;
    Eigen::Index rows = 0, cols = 0;
    std::vector<char> bytes;
    bool operator==(const Tensor&) const = default;
  };
  const Tensor& find(const std::string& name, DType dtype) const;

  std::map<std::string, Tensor> tensors_;
};

}  // namespace bilearn

#pragma once

#include "bilearn/core.hpp"

#include <string>
#include <vector>

namespace bilearn::nn {

enum class ParamKind : std::uint8_t {
  kWeight = 0,  // trainable, weight-decayed
  kBias = 1,    // trainable, weight-decayed (matches the usual SGD convention)
  kBuffer = 2,  // running statistics; never receives gradients
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  ParamKind kind = ParamKind::kWeight;

  bool trainable() const { return kind != ParamKind::kBuffer; }
};

/// Flat, ordered collection of named tensors. Layers refer to entries by index,
/// so model structure and parameter values live apart.
template <typename Scalar>
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix<Scalar> value, ParamKind kind) {
    entries_.push_back({std::move(name), std::move(value), kind});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  Matrix<Scalar>& operator[](std::size_t i) { return entries_[i].value; }
  const Matrix<Scalar>& operator[](std::size_t i) const { return entries_[i].value; }
  const Parameter<Scalar>& entry(std::size_t i) const { return entries_[i]; }
  Parameter<Scalar>& entry(std::size_t i) { return entries_[i]; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  ParameterSet zeros_like() const {
    ParameterSet out = *this;
    for (auto& e : out.entries_) e.value.setZero();
    return out;
  }

  bool same_layout(const ParameterSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.kind != b.kind || a.value.rows() != b.value.rows() ||
          a.value.cols() != b.value.cols()) {
        return false;
      }
    }
    return true;
  }

  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  template <typename To>
  ParameterSet<To> cast() const {
    ParameterSet<To> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<To>(), e.kind);
    return out;
  }

  bool operator==(const ParameterSet& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_[i].value != other.entries_[i].value) return false;
    }
    return true;
  }

 private:
  std::vector<Parameter<Scalar>> entries_;
};

}  // namespace bilearn::nn

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bilearn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Label = std::int32_t;

/// Probability floor applied inside every logarithm.
inline constexpr double kProbFloor = 1e-12;

/// Raised for malformed inputs and configuration; the CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for file-system and runtime failures; the CLI maps it to exit code 1.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

/// Number of classes; labels live in [0, c).
class LabelSpace {
 public:
  explicit LabelSpace(int num_classes);

  int size() const { return num_classes_; }
  bool contains(Label label) const { return label >= 0 && label < num_classes_; }
  void check(Label label, const std::string& what = "label") const;

 private:
  int num_classes_;
};

/// One training record. `clean_label` is for evaluation only.
struct Example {
  std::int64_t index = 0;
  Vector<float> features;
  Label noisy_label = 0;
  std::optional<Label> clean_label;
};

/// A point on the probability simplex.
template <typename Scalar>
class ProbabilityVector {
 public:
  ProbabilityVector() = default;

  /// Validates entries in [0, 1] summing to 1 within `tolerance`.
  static ProbabilityVector from(Vector<Scalar> entries, double tolerance = 1e-6) {
    require(entries.size() > 0, "probability vector must be non-empty");
    for (Eigen::Index k = 0; k < entries.size(); ++k) {
      const double v = static_cast<double>(entries[k]);
      require(std::isfinite(v) && v >= -tolerance && v <= 1.0 + tolerance,
              "probability entry outside [0, 1]");
    }
    require(std::abs(static_cast<double>(entries.sum()) - 1.0) <= tolerance,
            "probability entries must sum to 1");
    return ProbabilityVector(std::move(entries));
  }

  /// Wraps entries already known to lie on the simplex (softmax output).
  static ProbabilityVector trusted(Vector<Scalar> entries) { return ProbabilityVector(std::move(entries)); }

  const Vector<Scalar>& values() const { return entries_; }
  Scalar operator[](Eigen::Index k) const { return entries_[k]; }
  Eigen::Index size() const { return entries_.size(); }

 private:
  explicit ProbabilityVector(Vector<Scalar> entries) : entries_(std::move(entries)) {}
  Vector<Scalar> entries_;
};

/// Per-sample weights indexed by Example::index; every entry lies in [0, 1].
class WeightTable {
 public:
  WeightTable() = default;
  static WeightTable ones(std::size_t n) { return WeightTable(std::vector<double>(n, 1.0)); }
  static WeightTable from(std::vector<double> weights);

  std::size_t size() const { return weights_.size(); }
  double at(std::int64_t index) const;
  const std::vector<double>& values() const { return weights_; }
  bool all_ones() const;

 private:
  explicit WeightTable(std::vector<double> weights) : weights_(std::move(weights)) {}
  std::vector<double> weights_;
};

/// Max-subtracted softmax.
template <typename Derived>
ProbabilityVector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  require(logits.size() > 0, "softmax of empty vector");
  require(logits.allFinite(), "softmax input must be finite");
  const Scalar peak = logits.maxCoeff();
  Vector<Scalar> e = (logits.derived().template cast<Scalar>().array() - peak).exp().matrix();
  e /= e.sum();
  return ProbabilityVector<Scalar>::trusted(std::move(e));
}

/// Row-wise softmax of a batch of logits (one sample per row).
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  require(logits.allFinite(), "softmax input must be finite");
  Matrix<Scalar> out = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

template <typename Scalar = double>
Vector<Scalar> one_hot(Label label, int num_classes) {
  require(num_classes >= 1, "one_hot: class count must be positive");
  require(label >= 0 && label < num_classes,
          "one_hot: label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  Vector<Scalar> v = Vector<Scalar>::Zero(num_classes);
  v[label] = Scalar(1);
  return v;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Label argmax(const Eigen::MatrixBase<Derived>& v) {
  Label best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) best = static_cast<Label>(k);
  }
  return best;
}

}  // namespace bilearn

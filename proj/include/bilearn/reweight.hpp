#pragma once

// Dynamic sample reweighting from the negative head, corrected labels, and
// complementary-label sampling.

#include "bilearn/core.hpp"

#include <random>
#include <span>

namespace bilearn {

/// Per-sample corrected labels; empty during warm-up.
class CorrectedLabels {
 public:
  CorrectedLabels() = default;
  explicit CorrectedLabels(std::vector<Label> labels) : labels_(std::move(labels)) {}

  bool defined() const { return !labels_.empty(); }
  std::size_t size() const { return labels_.size(); }
  std::optional<Label> at(std::int64_t index) const;
  const std::vector<Label>& values() const { return labels_; }

 private:
  std::vector<Label> labels_;
};

/// argmax(p_pos + p_neg), lowest index on ties.
template <typename Scalar>
Label corrected_label(const ProbabilityVector<Scalar>& p_pos, const ProbabilityVector<Scalar>& p_neg) {
  require(p_pos.size() == p_neg.size(), "corrected_label: length mismatch");
  return argmax(p_pos.values() + p_neg.values());
}

/// Uniform draw from the classes other than `noisy_label` and `corrected`.
/// Falls back to excluding only `noisy_label` when nothing else is left.
Label sample_complementary(Label noisy_label, std::optional<Label> corrected, int num_classes,
                           std::mt19937_64& rng);

/// Dataset-wide min-max normalization; a degenerate range gives all ones.
WeightTable update_weights(std::span<const double> neg_probs_on_noisy_label);

/// Fraction of samples with probability strictly below `threshold`.
double estimate_noise_ratio(std::span<const double> neg_probs_on_noisy_label, double threshold);

/// SOP coefficient beta = scale * r^2 (scale 50 by default).
double beta_from_ratio(double noise_ratio, double scale = 50.0);

}  // namespace bilearn

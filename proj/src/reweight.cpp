#include "bilearn/reweight.hpp"

#include <algorithm>

namespace bilearn {

std::optional<Label> CorrectedLabels::at(std::int64_t index) const {
  if (labels_.empty()) return std::nullopt;
  if (index < 0 || static_cast<std::size_t>(index) >= labels_.size()) {
    throw ValidationError("no corrected label for sample index " + std::to_string(index));
  }
  return labels_[static_cast<std::size_t>(index)];
}

Label sample_complementary(Label noisy_label, std::optional<Label> corrected, int num_classes,
                           std::mt19937_64& rng) {
  require(num_classes >= 2, "sample_complementary: need at least 2 classes");
  require(noisy_label >= 0 && noisy_label < num_classes, "sample_complementary: noisy label out of range");
  if (corrected) require(*corrected >= 0 && *corrected < num_classes, "sample_complementary: corrected label out of range");

  const bool exclude_corrected = corrected && *corrected != noisy_label && num_classes > 2;
  const int candidates = num_classes - 1 - (exclude_corrected ? 1 : 0);
  std::uniform_int_distribution<int> dist(0, candidates - 1);
  int pick = dist(rng);
  // Walk the label space skipping excluded classes.
  for (Label k = 0; k < num_classes; ++k) {
    if (k == noisy_label || (exclude_corrected && k == *corrected)) continue;
    if (pick-- == 0) return k;
  }
  throw RuntimeError("sample_complementary: candidate walk overran");  // unreachable
}

WeightTable update_weights(std::span<const double> probs) {
  require(!probs.empty(), "update_weights: empty input");
  for (double p : probs) require(std::isfinite(p) && p >= 0.0 && p <= 1.0, "update_weights: entry outside [0, 1]");
  const auto [lo, hi] = std::minmax_element(probs.begin(), probs.end());
  const double min = *lo, max = *hi;
  std::vector<double> w(probs.size(), 1.0);
  if (max > min) {
    const double range = max - min;
    for (std::size_t i = 0; i < probs.size(); ++i) w[i] = std::clamp((probs[i] - min) / range, 0.0, 1.0);
  }
  return WeightTable::from(std::move(w));
}

double estimate_noise_ratio(std::span<const double> probs, double threshold) {
  require(!probs.empty(), "estimate_noise_ratio: empty input");
  require(threshold > 0.0 && threshold < 1.0, "estimate_noise_ratio: threshold must be in (0, 1)");
  const auto below = std::count_if(probs.begin(), probs.end(), [&](double p) { return p < threshold; });
  return static_cast<double>(below) / static_cast<double>(probs.size());
}

double beta_from_ratio(double noise_ratio, double scale) {
  require(noise_ratio >= 0.0 && noise_ratio <= 1.0, "beta_from_ratio: ratio must be in [0, 1]");
  require(scale >= 0.0, "beta_from_ratio: scale must be non-negative");
  return noise_ratio * noise_ratio * scale;
}

}  // namespace bilearn

#pragma once

// Label-noise detection by thresholding the negative head's probability on the
// given label, and its evaluation against known clean labels.

#include "bilearn/core.hpp"

#include <filesystem>
#include <span>

namespace bilearn {

/// Per-sample flags; true means predicted (or known) noisy.
struct NoiseMask {
  std::vector<bool> noisy;

  std::size_t size() const { return noisy.size(); }
  std::size_t flagged() const;
};

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  /// Harmonic mean; 0 when precision + recall = 0.
  static double f1_score(double precision, double recall);
};

/// Sample i is flagged noisy iff probs[i] < threshold.
NoiseMask classify_noise(std::span<const double> neg_probs_on_noisy_label, double threshold);

/// Ground truth: noisy iff the given label differs from the clean label.
NoiseMask truth_mask(std::span<const Label> noisy_labels, std::span<const Label> clean_labels);

DetectionMetrics precision_recall_f1(const NoiseMask& predicted, const NoiseMask& truth);

struct SweepPoint {
  double threshold = 0.0;
  DetectionMetrics metrics;
  std::size_t flagged = 0;
};

std::vector<SweepPoint> threshold_sweep(std::span<const double> neg_probs, const NoiseMask& truth,
                                        std::span<const double> thresholds);

/// `steps` evenly spaced thresholds from h_min to h_max inclusive (h_min alone when steps = 1).
std::vector<double> threshold_grid(double h_min, double h_max, int steps);

/// "h,precision,recall,f1" rows.
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepPoint> points);

/// Area under the ROC curve for ranking truly noisy samples above clean ones by
/// `suspicion` (higher = more likely noisy). Ties count one half.
double roc_auc(std::span<const double> suspicion, const NoiseMask& truth);

}  // namespace bilearn

#include "bilearn/detect.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace bilearn {

std::size_t NoiseMask::flagged() const {
  return static_cast<std::size_t>(std::count(noisy.begin(), noisy.end(), true));
}

double DetectionMetrics::f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

NoiseMask classify_noise(std::span<const double> probs, double threshold) {
  require(!probs.empty(), "classify_noise: empty input");
  require(threshold > 0.0 && threshold < 1.0, "classify_noise: threshold must be in (0, 1)");
  NoiseMask mask;
  mask.noisy.reserve(probs.size());
  for (double p : probs) {
    require(p >= 0.0 && p <= 1.0, "classify_noise: probability outside [0, 1]");
    mask.noisy.push_back(p < threshold);
  }
  return mask;
}

NoiseMask truth_mask(std::span<const Label> noisy_labels, std::span<const Label> clean_labels) {
  require(noisy_labels.size() == clean_labels.size(), "truth_mask: length mismatch");
  NoiseMask mask;
  mask.noisy.reserve(noisy_labels.size());
  for (std::size_t i = 0; i < noisy_labels.size(); ++i) mask.noisy.push_back(noisy_labels[i] != clean_labels[i]);
  return mask;
}

DetectionMetrics precision_recall_f1(const NoiseMask& predicted, const NoiseMask& truth) {
  require(predicted.size() == truth.size(), "precision_recall_f1: mask length mismatch");
  DetectionMetrics m;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted.noisy[i];
    const bool t = truth.noisy[i];
    m.tp += p && t;
    m.fp += p && !t;
    m.fn += !p && t;
    m.tn += !p && !t;
  }
  const auto ratio = [](std::size_t num, std::size_t den) {
    return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = DetectionMetrics::f1_score(m.precision, m.recall);
  return m;
}

std::vector<SweepPoint> threshold_sweep(std::span<const double> probs, const NoiseMask& truth,
                                        std::span<const double> thresholds) {
  require(!thresholds.empty(), "threshold_sweep: empty grid");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    require(thresholds[i] > 0.0 && thresholds[i] < 1.0, "threshold_sweep: thresholds must be in (0, 1)");
    if (i > 0) require(thresholds[i] > thresholds[i - 1], "threshold_sweep: grid must be strictly increasing");
  }
  std::vector<SweepPoint> out;
  out.reserve(thresholds.size());
  for (double h : thresholds) {
    const NoiseMask mask = classify_noise(probs, h);
    out.push_back({h, precision_recall_f1(mask, truth), mask.flagged()});
  }
  return out;
}

std::vector<double> threshold_grid(double h_min, double h_max, int steps) {
  require(steps >= 1, "threshold grid needs at least one step");
  require(h_min > 0.0 && h_max < 1.0 && h_min <= h_max, "threshold grid must lie in (0, 1) with h_min <= h_max");
  if (steps == 1) return {h_min};
  require(h_max > h_min, "threshold grid with several steps needs h_max > h_min");
  std::vector<double> grid(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) grid[static_cast<std::size_t>(i)] = h_min + (h_max - h_min) * i / (steps - 1);
  return grid;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepPoint> points) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write sweep file " + path.string());
  out.precision(6);
  out << std::fixed << "h,precision,recall,f1\n";
  for (const auto& p : points) {
    out << p.threshold << ',' << p.metrics.precision << ',' << p.metrics.recall << ',' << p.metrics.f1 << '\n';
  }
}

double roc_auc(std::span<const double> suspicion, const NoiseMask& truth) {
  require(suspicion.size() == truth.size(), "roc_auc: length mismatch");
  const std::size_t n = suspicion.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return suspicion[a] < suspicion[b]; });
  // Mann-Whitney U with mid-ranks for ties.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && suspicion[order[j]] == suspicion[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (truth.noisy[order[k]]) {
        rank_sum += mid_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  require(positives > 0 && negatives > 0, "roc_auc: needs both noisy and clean samples");
  const double u = rank_sum - 0.5 * static_cast<double>(positives) * static_cast<double>(positives + 1);
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

}  // namespace bilearn

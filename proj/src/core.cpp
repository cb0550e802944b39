#include "bilearn/core.hpp"

#include <algorithm>

namespace bilearn {

LabelSpace::LabelSpace(int num_classes) : num_classes_(num_classes) {
  require(num_classes >= 2, "label space needs at least 2 classes, got " + std::to_string(num_classes));
}

void LabelSpace::check(Label label, const std::string& what) const {
  require(contains(label),
          what + " " + std::to_string(label) + " outside [0, " + std::to_string(num_classes_) + ")");
}

WeightTable WeightTable::from(std::vector<double> weights) {
  for (double w : weights) {
    require(std::isfinite(w) && w >= 0.0 && w <= 1.0, "weight outside [0, 1]: " + std::to_string(w));
  }
  return WeightTable(std::move(weights));
}

double WeightTable::at(std::int64_t index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= weights_.size()) {
    throw ValidationError("no weight for sample index " + std::to_string(index));
  }
  return weights_[static_cast<std::size_t>(index)];
}

bool WeightTable::all_ones() const {
  return std::all_of(weights_.begin(), weights_.end(), [](double w) { return w == 1.0; });
}

}  // namespace bilearn

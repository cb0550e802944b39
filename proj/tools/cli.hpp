#pragma once

#include "bilearn/core.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace bilearn::cli {

/// Rows of probs_final.csv.
struct ProbabilityDump {
  std::vector<Label> noisy_labels;
  std::optional<std::vector<Label>> clean_labels;
  std::vector<double> neg_probs;
  std::vector<double> pos_probs;
  std::vector<Label> corrected;
};

ProbabilityDump read_probability_dump(const std::filesystem::path& path);

/// Parses argv and runs one command. Returns 0 on success, 1 on runtime
/// failure and 2 on invalid input.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bilearn::cli

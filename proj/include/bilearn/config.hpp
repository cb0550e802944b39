#pragma once

// Run configuration: typed structs plus a flat "dotted.key = value" text form
// used for presets, config files, --set overrides and the run snapshot.

#include "bilearn/data.hpp"
#include "bilearn/losses.hpp"
#include "bilearn/model.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace bilearn {

enum class HeadMode { kBoth, kPositiveOnly, kNegativeOnly };

HeadMode parse_head_mode(std::string_view name);
std::string_view to_string(HeadMode mode);

struct TrainConfig {
  int epochs = 320;
  int warmup_epochs = 20;
  int batch_size = 256;
  double lr_init = 0.04;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int t_max = 300;
  double eta_min = 2e-4;
  std::uint64_t seed = 1;
  LossWeights loss;
  double beta_scale = 50.0;
  double threshold = 0.3;
  double jitter = 0.1;         // augmentation std as a fraction of each feature's std
  double sop_lr_scale = 1.0;   // slack-variable learning rate relative to lr_init
  double sop_init_std = 1e-8;
  HeadMode heads = HeadMode::kBoth;
  int checkpoint_every = 1;    // 0 disables intermediate checkpoints
  bool record_wall_clock = false;
  bool dump_weights = false;

  void validate() const;
};

enum class DataSource { kBlobs, kCifar10, kCifar100 };

struct DataConfig {
  DataSource source = DataSource::kBlobs;
  std::size_t n = 3000;
  int classes = 3;
  int dim = 8;
  double separation = 6.0;
  std::size_t test_n = 1000;
  std::filesystem::path path;  // directory with CIFAR binary batches
  std::size_t subset = 0;      // 0 = all training records
  std::size_t test_subset = 0;
};

struct NoiseConfig {
  NoiseKind kind = NoiseKind::kSymmetric;
  double rate = 0.4;
  std::filesystem::path sidecar;
};

struct RunConfig {
  std::string name = "run";
  DataConfig data;
  NoiseConfig noise;
  ModelConfig model;
  TrainConfig train;

  void validate() const;
};

/// Ordered key -> raw value map.
using FlatConfig = std::map<std::string, std::string>;

/// Parses "key = value" lines; '#' starts a comment. A `base = <preset>` line
/// pulls in a preset underneath the file's own keys.
FlatConfig parse_flat_config(std::string_view text, const std::string& origin = "<config>");
std::string format_flat_config(const FlatConfig& flat);

/// Preset name or path to a config file.
FlatConfig load_flat_config(const std::string& preset_or_path);

std::vector<std::string> preset_names();
FlatConfig preset(const std::string& name);

/// Applies "key=value"; `key` may be a unique trailing component (e.g. lr_init).
void apply_override(FlatConfig& flat, std::string_view assignment);

FlatConfig to_flat(const RunConfig& config);
/// Converts and validates; errors name the offending key.
RunConfig from_flat(const FlatConfig& flat);

}  // namespace bilearn

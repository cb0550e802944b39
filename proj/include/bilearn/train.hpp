#pragma once

#include "bilearn/checkpoint.hpp"
#include "bilearn/config.hpp"
#include "bilearn/reweight.hpp"

#include <filesystem>
#include <functional>

namespace bilearn {

struct EpochReport {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_pl = 0.0;
  double loss_nl = 0.0;
  double loss_sd = 0.0;
  double train_acc = 0.0;  // running accuracy of the primary head vs noisy labels
  std::optional<double> test_acc;
  double r_est = 0.0;
  double beta = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  double mean_weight = 1.0;
  bool warmup = false;

  bool operator==(const EpochReport&) const = default;
};

/// eta_min + (lr_init - eta_min) * (1 + cos(pi * min(epoch, t_max) / t_max)) / 2.
double cosine_lr(int epoch, const TrainConfig& cfg);

/// Per-sample slack variables of the over-parameterized noise model and their
/// momentum buffers; one row per training sample.
struct SlackVariables {
  Matrix<float> u, v;
  Matrix<float> u_momentum, v_momentum;
};

/// Everything that evolves during training; checkpoints hold exactly this.
struct TrainerState {
  int next_epoch = 0;
  TwoHeadModel<float> model;
  EmaState<float> ema;
  nn::ParameterSet<float> momentum;
  SlackVariables slack;
  WeightTable weights;
  CorrectedLabels corrected;
  double r_est = 0.0;
  double beta = 0.0;
  std::vector<EpochReport> history;
};

TrainerState init_state(const RunConfig& config, const Dataset& train);

/// Full-dataset predictions of one parameter set (normally the EMA shadow).
struct InferenceResult {
  Matrix<double> positive_probs;  // N x c
  Matrix<double> negative_probs;  // N x c
  std::vector<double> neg_prob_on_noisy_label;
  std::vector<double> pos_prob_on_noisy_label;
  std::vector<Label> corrected;
};

InferenceResult infer(const TwoHeadModel<float>& model, const nn::ParameterSet<float>& params,
                      const Dataset& dataset, HeadMode heads, std::size_t batch_size = 512);

/// Fraction of rows whose argmax equals `labels`.
double accuracy(const Matrix<double>& probs, std::span<const Label> labels);

/// Epoch-boundary refresh: weights, corrected labels, noise ratio and beta.
void apply_refresh(TrainerState& state, const InferenceResult& inference, const TrainConfig& cfg);

/// One pass over `train` with the current weights and corrected labels.
EpochReport train_epoch(TrainerState& state, const Dataset& train, const AugmentSpec& augment,
                        const TrainConfig& cfg);

Checkpoint to_checkpoint(const TrainerState& state, const std::string& config_snapshot);
TrainerState from_checkpoint(const Checkpoint& ckpt, const RunConfig& config, const Dataset& train);

struct Datasets {
  Dataset train;
  std::optional<Dataset> test;
};

/// Builds the train (noisy) and optional clean test split described by `config`.
Datasets build_datasets(const RunConfig& config);

struct RunOptions {
  std::filesystem::path run_dir;
  bool resume = false;
  bool force = false;
  /// Stops after this many completed epochs, leaving a resumable checkpoint.
  std::optional<int> stop_after_epoch;
  std::function<void(const EpochReport&, const TrainerState&)> on_epoch;
  bool quiet = true;
};

struct RunArtifacts {
  std::filesystem::path run_dir;
  std::vector<EpochReport> history;
  InferenceResult final_inference;
  WeightTable final_weights;
  bool completed = false;
  std::vector<std::filesystem::path> files;
};

/// Warm-up, then {EMA refresh -> train_epoch} per epoch; writes the run
/// directory (config_snapshot, metrics.csv, probs_final.csv, weights_final.csv,
/// noise_mask.csv, checkpoint_final, dataset_manifest.csv, manifest.json).
RunArtifacts run(const RunConfig& config, const Datasets& data, const RunOptions& options);

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochReport> history, bool wall_clock);
void write_weight_dump(const std::filesystem::path& path, const WeightTable& weights,
                       std::span<const double> neg_probs, std::span<const Label> corrected);

}  // namespace bilearn

#pragma once

#include "bilearn/core.hpp"
#include "bilearn/nn/layers.hpp"

#include <filesystem>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace bilearn {

/// Column-oriented labeled dataset. Row i of `features` is Example::index i.
struct Dataset {
  LabelSpace label_space{2};
  nn::FeatureShape shape;
  RowMatrix<float> features;
  std::vector<Label> noisy_labels;
  std::optional<std::vector<Label>> clean_labels;

  std::size_t size() const { return noisy_labels.size(); }
  bool has_clean_labels() const { return clean_labels.has_value(); }
  int num_classes() const { return label_space.size(); }
  Example example(std::size_t i) const;
  /// Number of samples whose noisy label differs from the clean one.
  std::size_t noisy_count() const;
  void validate() const;
};

enum class NoiseKind { kNone, kSymmetric, kPairflip, kSidecar };

NoiseKind parse_noise_kind(std::string_view name);
std::string_view to_string(NoiseKind kind);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kNone;
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path sidecar_path;
};

/// n samples in c axis-aligned unit-covariance clusters at separation * e_k.
/// Sample i belongs to class i mod c; clean and noisy labels start equal.
Dataset make_gaussian_blobs(std::size_t n, int num_classes, int dim, double separation, std::uint64_t seed);

/// Flips each label with probability `rate` to a uniformly drawn different class.
Dataset inject_symmetric_noise(Dataset dataset, double rate, std::uint64_t seed);

/// Flips label k to (k + 1) mod c with probability `rate`.
Dataset inject_pairflip_noise(Dataset dataset, double rate, std::uint64_t seed);

/// Replaces noisy labels with one integer per line, in dataset order.
Dataset load_noisy_sidecar(Dataset dataset, const std::filesystem::path& path);

std::vector<Label> read_sidecar(const std::filesystem::path& path, int num_classes,
                                std::optional<std::size_t> expected_count = std::nullopt);
void write_sidecar(const std::filesystem::path& path, std::span<const Label> labels);

Dataset apply_noise(Dataset dataset, const NoiseSpec& spec);

/// "index,clean_label,noisy_label" rows; clean_label is blank when unknown.
void write_dataset_manifest(const std::filesystem::path& path, const Dataset& dataset);

enum class CifarVariant { kCifar10, kCifar100 };

/// Reads CIFAR binary batches (1 label byte for CIFAR-10, coarse+fine bytes for
/// CIFAR-100, then 3072 channel-major pixels). Pixels are scaled to [0, 1] and
/// standardized with the usual per-channel statistics.
Dataset load_cifar_binary(std::span<const std::filesystem::path> files, CifarVariant variant,
                          std::size_t limit = 0);

/// Per-feature affine map to zero mean and unit variance, fitted on one split.
struct FeatureScaler {
  Vector<float> mean;
  Vector<float> inv_std;

  static FeatureScaler fit(const Dataset& dataset);
  Dataset apply(Dataset dataset) const;
};

/// First `n` samples (all when n = 0 or n >= size).
Dataset take_prefix(Dataset dataset, std::size_t n);

struct AugmentSpec {
  enum class Kind { kJitter, kCropFlip };
  Kind kind = Kind::kJitter;
  Vector<float> jitter_sigma;  // per-feature standard deviation of the additive noise
  int crop_padding = 4;
};

/// Gaussian jitter at `jitter_scale` times each feature's std for vector data,
/// random crop + horizontal flip for images.
AugmentSpec make_augment_spec(const Dataset& dataset, double jitter_scale);

/// Two independent augmentations, deterministic in (index, epoch, seed).
std::pair<Vector<float>, Vector<float>> two_view_augment(const Example& example, const AugmentSpec& spec,
                                                         nn::FeatureShape shape, std::int64_t epoch,
                                                         std::uint64_t seed);

/// Deterministic generator for a named stream of (seed, epoch, key).
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch, std::uint64_t key = 0);

}  // namespace bilearn

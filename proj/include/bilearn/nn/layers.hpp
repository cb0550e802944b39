#pragma once

// Minimal layer library with hand-written backward passes.
//
// Activations are row-major batches: one sample per row, image samples laid
// out channel-major (C, H, W). Layers own only structure and parameter
// indices; values live in a ParameterSet and per-call intermediates in a
// LayerCache, so forward passes are const and re-entrant.

#include "bilearn/nn/parameters.hpp"

#include <memory>
#include <random>

namespace bilearn::nn {

template <typename Scalar>
using Batch = RowMatrix<Scalar>;

struct FeatureShape {
  int channels = 0;
  int height = 1;
  int width = 1;

  int flat() const { return channels * height * width; }
  bool spatial() const { return height > 1 || width > 1; }
  bool operator==(const FeatureShape&) const = default;
};

std::string to_string(const FeatureShape& shape);

enum class Mode { kTrain, kEval };

template <typename Scalar>
struct LayerCache {
  std::vector<Batch<Scalar>> saved;
  std::vector<Eigen::Index> indices;
  std::vector<LayerCache> children;
};

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual FeatureShape input_shape() const = 0;
  virtual FeatureShape output_shape() const = 0;
  virtual Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                                LayerCache<Scalar>& cache) const = 0;
  /// Accumulates parameter gradients into `grads`; returns the input gradient.
  virtual Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                                 const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const = 0;
  /// Folds batch statistics recorded in `cache` into running buffers.
  virtual void commit_statistics(ParameterSet<Scalar>& /*params*/, const LayerCache<Scalar>& /*cache*/) const {}
};

template <typename Scalar>
using LayerPtr = std::unique_ptr<Layer<Scalar>>;

/// y = x W^T + b with W of shape (out, in).
template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  Linear(ParameterSet<Scalar>& params, std::mt19937_64& rng, const std::string& name, int in_features,
         int out_features);

  FeatureShape input_shape() const override { return {in_}; }
  FeatureShape output_shape() const override { return {out_}; }
  Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                        LayerCache<Scalar>& cache) const override;
  Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                         const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const override;

  std::size_t weight_index() const { return weight_; }
  std::size_t bias_index() const { return bias_; }

 private:
  int in_, out_;
  std::size_t weight_, bias_;
};

template <typename Scalar>
class ReLU final : public Layer<Scalar> {
 public:
  explicit ReLU(FeatureShape shape) : shape_(shape) {}

  FeatureShape input_shape() const override { return shape_; }
  FeatureShape output_shape() const override { return shape_; }
  Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                        LayerCache<Scalar>& cache) const override;
  Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                         const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const override;

 private:
  FeatureShape shape_;
};

/// Square-kernel 2-D convolution via im2col.
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(ParameterSet<Scalar>& params, std::mt19937_64& rng, const std::string& name, FeatureShape in,
         int out_channels, int kernel, int stride, int padding, bool bias);

  FeatureShape input_shape() const override { return in_; }
  FeatureShape output_shape() const override { return out_; }
  Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                        LayerCache<Scalar>& cache) const override;
  Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                         const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const override;

 private:
  Matrix<Scalar> im2col(const Scalar* image) const;
  void col2im(const Matrix<Scalar>& cols, Scalar* image) const;

  FeatureShape in_, out_;
  int kernel_, stride_, padding_;
  std::size_t weight_;
  std::optional<std::size_t> bias_;
};

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
template <typename Scalar>
class MaxPool2d final : public Layer<Scalar> {
 public:
  explicit MaxPool2d(FeatureShape in);

  FeatureShape input_shape() const override { return in_; }
  FeatureShape output_shape() const override { return out_; }
  Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                        LayerCache<Scalar>& cache) const override;
  Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                         const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const override;

 private:
  FeatureShape in_, out_;
};

/// Mean over spatial positions: (C, H, W) -> (C).
template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
 public:
  explicit GlobalAvgPool(FeatureShape in) : in_(in) {}

  FeatureShape input_shape() const override { return in_; }
  FeatureShape output_shape() const override { return {in_.channels}; }
  Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                        LayerCache<Scalar>& cache) const override;
  Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                         const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const override;

 private:
  FeatureShape in_;
};

/// Per-channel batch normalization with running statistics.
template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
 public:
  BatchNorm(ParameterSet<Scalar>& params, const std::string& name, FeatureShape shape, double momentum = 0.1,
            double eps = 1e-5);

  FeatureShape input_shape() const override { return shape_; }
  FeatureShape output_shape() const override { return shape_; }
  Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                        LayerCache<Scalar>& cache) const override;
  Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                         const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const override;
  void commit_statistics(ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache) const override;

 private:
  FeatureShape shape_;
  double momentum_, eps_;
  std::size_t scale_, shift_, running_mean_, running_var_;
};

template <typename Scalar>
class Sequential final : public Layer<Scalar> {
 public:
  explicit Sequential(FeatureShape in) : in_(in) {}

  /// Appends a layer whose input shape must match the current output shape.
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    append(std::move(layer));
    return ref;
  }
  void append(LayerPtr<Scalar> layer);

  FeatureShape input_shape() const override { return in_; }
  FeatureShape output_shape() const override { return layers_.empty() ? in_ : layers_.back()->output_shape(); }
  Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                        LayerCache<Scalar>& cache) const override;
  Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                         const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const override;
  void commit_statistics(ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache) const override;

  std::size_t size() const { return layers_.size(); }

 private:
  FeatureShape in_;
  std::vector<LayerPtr<Scalar>> layers_;
};

/// Pre-activation residual block: BN-ReLU-Conv3x3-BN-ReLU-Conv3x3 plus a
/// 1x1 projection shortcut on the pre-activated input when the shape changes.
template <typename Scalar>
class PreActBlock final : public Layer<Scalar> {
 public:
  PreActBlock(ParameterSet<Scalar>& params, std::mt19937_64& rng, const std::string& name, FeatureShape in,
              int out_channels, int stride);

  FeatureShape input_shape() const override { return in_; }
  FeatureShape output_shape() const override { return conv2_->output_shape(); }
  Batch<Scalar> forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                        LayerCache<Scalar>& cache) const override;
  Batch<Scalar> backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                         const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const override;
  void commit_statistics(ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache) const override;

 private:
  FeatureShape in_;
  std::unique_ptr<BatchNorm<Scalar>> bn1_, bn2_;
  std::unique_ptr<ReLU<Scalar>> relu1_, relu2_;
  std::unique_ptr<Conv2d<Scalar>> conv1_, conv2_, shortcut_;
};

}  // namespace bilearn::nn

#include "bilearn/nn/layers.hpp"

#include <cmath>
#include <limits>

namespace bilearn::nn {

std::string to_string(const FeatureShape& shape) {
  return "(" + std::to_string(shape.channels) + ", " + std::to_string(shape.height) + ", " +
         std::to_string(shape.width) + ")";
}

namespace {

template <typename Scalar>
Matrix<Scalar> uniform_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  }
  return m;
}

void check_input(const FeatureShape& expected, Eigen::Index cols, const char* layer) {
  require(cols == expected.flat(), std::string(layer) + ": expected " + std::to_string(expected.flat()) +
                                       " input features, got " + std::to_string(cols));
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear

template <typename Scalar>
Linear<Scalar>::Linear(ParameterSet<Scalar>& params, std::mt19937_64& rng, const std::string& name,
                       int in_features, int out_features)
    : in_(in_features), out_(out_features) {
  require(in_features > 0 && out_features > 0, "linear layer sizes must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight_ = params.add(name + ".weight", uniform_init<Scalar>(rng, out_, in_, bound), ParamKind::kWeight);
  bias_ = params.add(name + ".bias", uniform_init<Scalar>(rng, out_, 1, bound), ParamKind::kBias);
}

template <typename Scalar>
Batch<Scalar> Linear<Scalar>::forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode,
                                      LayerCache<Scalar>& cache) const {
  check_input({in_}, x.cols(), "linear");
  Batch<Scalar> y = x * params[weight_].transpose();
  y.rowwise() += params[bias_].col(0).transpose();
  cache.saved = {x};
  return y;
}

template <typename Scalar>
Batch<Scalar> Linear<Scalar>::backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                                       const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const {
  const Batch<Scalar>& x = cache.saved.at(0);
  grads[weight_].noalias() += grad_out.transpose() * x;
  grads[bias_].col(0) += grad_out.colwise().sum().transpose();
  return grad_out * params[weight_];
}

// ---------------------------------------------------------------------------
// ReLU

template <typename Scalar>
Batch<Scalar> ReLU<Scalar>::forward(const ParameterSet<Scalar>&, const Batch<Scalar>& x, Mode,
                                    LayerCache<Scalar>& cache) const {
  check_input(shape_, x.cols(), "relu");
  Batch<Scalar> y = x.cwiseMax(Scalar(0));
  cache.saved = {y};
  return y;
}

template <typename Scalar>
Batch<Scalar> ReLU<Scalar>::backward(const ParameterSet<Scalar>&, const LayerCache<Scalar>& cache,
                                     const Batch<Scalar>& grad_out, ParameterSet<Scalar>&) const {
  const Batch<Scalar>& y = cache.saved.at(0);
  return (y.array() > Scalar(0)).select(grad_out, Scalar(0));
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(ParameterSet<Scalar>& params, std::mt19937_64& rng, const std::string& name,
                       FeatureShape in, int out_channels, int kernel, int stride, int padding, bool bias)
    : in_(in), kernel_(kernel), stride_(stride), padding_(padding) {
  require(in.channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && padding >= 0,
          "conv2d: invalid geometry");
  const int out_h = (in.height + 2 * padding - kernel) / stride + 1;
  const int out_w = (in.width + 2 * padding - kernel) / stride + 1;
  require(out_h > 0 && out_w > 0, "conv2d: kernel larger than padded input " + to_string(in));
  out_ = {out_channels, out_h, out_w};
  const int fan_in = in.channels * kernel * kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight_ = params.add(name + ".weight", uniform_init<Scalar>(rng, out_channels, fan_in, bound), ParamKind::kWeight);
  if (bias) bias_ = params.add(name + ".bias", uniform_init<Scalar>(rng, out_channels, 1, bound), ParamKind::kBias);
}

template <typename Scalar>
Matrix<Scalar> Conv2d<Scalar>::im2col(const Scalar* image) const {
  const int positions = out_.height * out_.width;
  Matrix<Scalar> cols(positions, in_.channels * kernel_ * kernel_);
  for (int c = 0; c < in_.channels; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        const int q = (c * kernel_ + ki) * kernel_ + kj;
        for (int ho = 0; ho < out_.height; ++ho) {
          const int h = ho * stride_ - padding_ + ki;
          for (int wo = 0; wo < out_.width; ++wo) {
            const int w = wo * stride_ - padding_ + kj;
            const bool inside = h >= 0 && h < in_.height && w >= 0 && w < in_.width;
            cols(ho * out_.width + wo, q) = inside ? image[(c * in_.height + h) * in_.width + w] : Scalar(0);
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void Conv2d<Scalar>::col2im(const Matrix<Scalar>& cols, Scalar* image) const {
  for (int c = 0; c < in_.channels; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        const int q = (c * kernel_ + ki) * kernel_ + kj;
        for (int ho = 0; ho < out_.height; ++ho) {
          const int h = ho * stride_ - padding_ + ki;
          if (h < 0 || h >= in_.height) continue;
          for (int wo = 0; wo < out_.width; ++wo) {
            const int w = wo * stride_ - padding_ + kj;
            if (w < 0 || w >= in_.width) continue;
            image[(c * in_.height + h) * in_.width + w] += cols(ho * out_.width + wo, q);
          }
        }
      }
    }
  }
}

template <typename Scalar>
Batch<Scalar> Conv2d<Scalar>::forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode,
                                      LayerCache<Scalar>& cache) const {
  check_input(in_, x.cols(), "conv2d");
  const Eigen::Index positions = out_.height * out_.width;
  Batch<Scalar> y(x.rows(), out_.flat());
  const Matrix<Scalar>& weight = params[weight_];
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    Matrix<Scalar> out = im2col(x.row(n).data()) * weight.transpose();
    if (bias_) out.rowwise() += params[*bias_].col(0).transpose();
    y.row(n) = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(out.data(), positions * out_.channels);
  }
  cache.saved = {x};
  return y;
}

template <typename Scalar>
Batch<Scalar> Conv2d<Scalar>::backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                                       const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const {
  const Batch<Scalar>& x = cache.saved.at(0);
  const Eigen::Index positions = out_.height * out_.width;
  const Matrix<Scalar>& weight = params[weight_];
  Batch<Scalar> dx = Batch<Scalar>::Zero(x.rows(), x.cols());
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    const Eigen::Map<const Matrix<Scalar>> g(grad_out.row(n).data(), positions, out_.channels);
    const Matrix<Scalar> cols = im2col(x.row(n).data());
    grads[weight_].noalias() += g.transpose() * cols;
    if (bias_) grads[*bias_].col(0) += g.colwise().sum().transpose();
    const Matrix<Scalar> dcols = g * weight;
    col2im(dcols, dx.row(n).data());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

template <typename Scalar>
MaxPool2d<Scalar>::MaxPool2d(FeatureShape in) : in_(in), out_{in.channels, in.height / 2, in.width / 2} {
  require(out_.height > 0 && out_.width > 0, "maxpool: input too small " + to_string(in));
}

template <typename Scalar>
Batch<Scalar> MaxPool2d<Scalar>::forward(const ParameterSet<Scalar>&, const Batch<Scalar>& x, Mode,
                                         LayerCache<Scalar>& cache) const {
  check_input(in_, x.cols(), "maxpool");
  Batch<Scalar> y(x.rows(), out_.flat());
  cache.indices.assign(static_cast<std::size_t>(x.rows() * out_.flat()), 0);
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    for (int c = 0; c < out_.channels; ++c) {
      for (int ho = 0; ho < out_.height; ++ho) {
        for (int wo = 0; wo < out_.width; ++wo) {
          Eigen::Index best = (c * in_.height + 2 * ho) * in_.width + 2 * wo;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const Eigen::Index idx = (c * in_.height + 2 * ho + di) * in_.width + 2 * wo + dj;
              if (x(n, idx) > x(n, best)) best = idx;
            }
          }
          const Eigen::Index o = (c * out_.height + ho) * out_.width + wo;
          y(n, o) = x(n, best);
          cache.indices[static_cast<std::size_t>(n * out_.flat() + o)] = best;
        }
      }
    }
  }
  cache.saved.clear();
  return y;
}

template <typename Scalar>
Batch<Scalar> MaxPool2d<Scalar>::backward(const ParameterSet<Scalar>&, const LayerCache<Scalar>& cache,
                                          const Batch<Scalar>& grad_out, ParameterSet<Scalar>&) const {
  Batch<Scalar> dx = Batch<Scalar>::Zero(grad_out.rows(), in_.flat());
  for (Eigen::Index n = 0; n < grad_out.rows(); ++n) {
    for (Eigen::Index o = 0; o < out_.flat(); ++o) {
      dx(n, cache.indices[static_cast<std::size_t>(n * out_.flat() + o)]) += grad_out(n, o);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

template <typename Scalar>
Batch<Scalar> GlobalAvgPool<Scalar>::forward(const ParameterSet<Scalar>&, const Batch<Scalar>& x, Mode,
                                             LayerCache<Scalar>&) const {
  check_input(in_, x.cols(), "avgpool");
  const Eigen::Index positions = in_.height * in_.width;
  Batch<Scalar> y(x.rows(), in_.channels);
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    const Eigen::Map<const Matrix<Scalar>> img(x.row(n).data(), positions, in_.channels);
    y.row(n) = img.colwise().mean();
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> GlobalAvgPool<Scalar>::backward(const ParameterSet<Scalar>&, const LayerCache<Scalar>&,
                                              const Batch<Scalar>& grad_out, ParameterSet<Scalar>&) const {
  const Eigen::Index positions = in_.height * in_.width;
  Batch<Scalar> dx(grad_out.rows(), in_.flat());
  for (Eigen::Index n = 0; n < grad_out.rows(); ++n) {
    Eigen::Map<Matrix<Scalar>> img(dx.row(n).data(), positions, in_.channels);
    img.rowwise() = grad_out.row(n) / static_cast<Scalar>(positions);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename Scalar>
BatchNorm<Scalar>::BatchNorm(ParameterSet<Scalar>& params, const std::string& name, FeatureShape shape,
                             double momentum, double eps)
    : shape_(shape), momentum_(momentum), eps_(eps) {
  const Eigen::Index c = shape.channels;
  scale_ = params.add(name + ".weight", Matrix<Scalar>::Ones(c, 1), ParamKind::kWeight);
  shift_ = params.add(name + ".bias", Matrix<Scalar>::Zero(c, 1), ParamKind::kBias);
  running_mean_ = params.add(name + ".running_mean", Matrix<Scalar>::Zero(c, 1), ParamKind::kBuffer);
  running_var_ = params.add(name + ".running_var", Matrix<Scalar>::Ones(c, 1), ParamKind::kBuffer);
}

template <typename Scalar>
Batch<Scalar> BatchNorm<Scalar>::forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                                         LayerCache<Scalar>& cache) const {
  check_input(shape_, x.cols(), "batchnorm");
  const Eigen::Index positions = shape_.height * shape_.width;
  const Eigen::Index channels = shape_.channels;
  const Eigen::Index count = x.rows() * positions;

  Vector<Scalar> mean, var;
  if (mode == Mode::kTrain) {
    require(count > 1, "batchnorm: training needs more than one value per channel");
    mean = Vector<Scalar>::Zero(channels);
    var = Vector<Scalar>::Zero(channels);
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      const Eigen::Map<const Matrix<Scalar>> img(x.row(n).data(), positions, channels);
      mean += img.colwise().sum().transpose();
    }
    mean /= static_cast<Scalar>(count);
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      const Eigen::Map<const Matrix<Scalar>> img(x.row(n).data(), positions, channels);
      var += (img.rowwise() - mean.transpose()).cwiseAbs2().colwise().sum().transpose();
    }
    var /= static_cast<Scalar>(count);
  } else {
    mean = params[running_mean_].col(0);
    var = params[running_var_].col(0);
  }
  const Vector<Scalar> inv_std = (var.array() + static_cast<Scalar>(eps_)).rsqrt().matrix();

  Batch<Scalar> xhat(x.rows(), x.cols());
  Batch<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    const Eigen::Map<const Matrix<Scalar>> img(x.row(n).data(), positions, channels);
    Eigen::Map<Matrix<Scalar>> h(xhat.row(n).data(), positions, channels);
    Eigen::Map<Matrix<Scalar>> out(y.row(n).data(), positions, channels);
    h = ((img.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array()).matrix();
    out = (h.array().rowwise() * params[scale_].col(0).transpose().array()).matrix();
    out.rowwise() += params[shift_].col(0).transpose();
  }

  Batch<Scalar> stats(3, channels);
  stats.row(0) = inv_std.transpose();
  stats.row(1) = mean.transpose();
  const Scalar unbias = count > 1 ? static_cast<Scalar>(count) / static_cast<Scalar>(count - 1) : Scalar(1);
  stats.row(2) = var.transpose() * unbias;
  cache.saved = {xhat, stats};
  cache.indices = {mode == Mode::kTrain ? 1 : 0};
  return y;
}

template <typename Scalar>
Batch<Scalar> BatchNorm<Scalar>::backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                                          const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const {
  const Batch<Scalar>& xhat = cache.saved.at(0);
  const Vector<Scalar> inv_std = cache.saved.at(1).row(0).transpose();
  const bool training = cache.indices.at(0) == 1;
  const Eigen::Index positions = shape_.height * shape_.width;
  const Eigen::Index channels = shape_.channels;
  const auto count = static_cast<Scalar>(grad_out.rows() * positions);
  const Vector<Scalar> gamma = params[scale_].col(0);

  Vector<Scalar> sum_dy = Vector<Scalar>::Zero(channels);
  Vector<Scalar> sum_dy_xhat = Vector<Scalar>::Zero(channels);
  for (Eigen::Index n = 0; n < grad_out.rows(); ++n) {
    const Eigen::Map<const Matrix<Scalar>> g(grad_out.row(n).data(), positions, channels);
    const Eigen::Map<const Matrix<Scalar>> h(xhat.row(n).data(), positions, channels);
    sum_dy += g.colwise().sum().transpose();
    sum_dy_xhat += g.cwiseProduct(h).colwise().sum().transpose();
  }
  grads[scale_].col(0) += sum_dy_xhat;
  grads[shift_].col(0) += sum_dy;

  Batch<Scalar> dx(grad_out.rows(), grad_out.cols());
  const Vector<Scalar> coef = gamma.cwiseProduct(inv_std);
  for (Eigen::Index n = 0; n < grad_out.rows(); ++n) {
    const Eigen::Map<const Matrix<Scalar>> g(grad_out.row(n).data(), positions, channels);
    const Eigen::Map<const Matrix<Scalar>> h(xhat.row(n).data(), positions, channels);
    Eigen::Map<Matrix<Scalar>> d(dx.row(n).data(), positions, channels);
    if (training) {
      // dx = gamma*inv_std/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
      const Matrix<Scalar> centered =
          (g * count).rowwise() - sum_dy.transpose() - (h.array().rowwise() * sum_dy_xhat.transpose().array()).matrix();
      d = (centered.array().rowwise() * (coef / count).transpose().array()).matrix();
    } else {
      d = (g.array().rowwise() * coef.transpose().array()).matrix();
    }
  }
  return dx;
}

template <typename Scalar>
void BatchNorm<Scalar>::commit_statistics(ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache) const {
  if (cache.indices.empty() || cache.indices[0] != 1) return;
  const Batch<Scalar>& stats = cache.saved.at(1);
  const auto m = static_cast<Scalar>(momentum_);
  params[running_mean_].col(0) = (Scalar(1) - m) * params[running_mean_].col(0) + m * stats.row(1).transpose();
  params[running_var_].col(0) = (Scalar(1) - m) * params[running_var_].col(0) + m * stats.row(2).transpose();
}

// ---------------------------------------------------------------------------
// Sequential

template <typename Scalar>
void Sequential<Scalar>::append(LayerPtr<Scalar> layer) {
  require(layer->input_shape().flat() == output_shape().flat(),
          "sequential: layer expects " + to_string(layer->input_shape()) + " but previous output is " +
              to_string(output_shape()));
  layers_.push_back(std::move(layer));
}

template <typename Scalar>
Batch<Scalar> Sequential<Scalar>::forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                                          LayerCache<Scalar>& cache) const {
  cache.children.assign(layers_.size(), {});
  if (layers_.empty()) return x;
  Batch<Scalar> h = layers_[0]->forward(params, x, mode, cache.children[0]);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(params, h, mode, cache.children[i]);
  return h;
}

template <typename Scalar>
Batch<Scalar> Sequential<Scalar>::backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                                           const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const {
  Batch<Scalar> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(params, cache.children.at(i), g, grads);
  return g;
}

template <typename Scalar>
void Sequential<Scalar>::commit_statistics(ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->commit_statistics(params, cache.children.at(i));
}

// ---------------------------------------------------------------------------
// PreActBlock

namespace {
enum BlockSlot : std::size_t { kBn1, kRelu1, kConv1, kBn2, kRelu2, kConv2, kShortcut, kSlots };
}

template <typename Scalar>
PreActBlock<Scalar>::PreActBlock(ParameterSet<Scalar>& params, std::mt19937_64& rng, const std::string& name,
                                 FeatureShape in, int out_channels, int stride)
    : in_(in) {
  bn1_ = std::make_unique<BatchNorm<Scalar>>(params, name + ".bn1", in);
  relu1_ = std::make_unique<ReLU<Scalar>>(in);
  conv1_ = std::make_unique<Conv2d<Scalar>>(params, rng, name + ".conv1", in, out_channels, 3, stride, 1, false);
  bn2_ = std::make_unique<BatchNorm<Scalar>>(params, name + ".bn2", conv1_->output_shape());
  relu2_ = std::make_unique<ReLU<Scalar>>(conv1_->output_shape());
  conv2_ = std::make_unique<Conv2d<Scalar>>(params, rng, name + ".conv2", conv1_->output_shape(), out_channels, 3,
                                            1, 1, false);
  if (stride != 1 || in.channels != out_channels) {
    shortcut_ = std::make_unique<Conv2d<Scalar>>(params, rng, name + ".shortcut", in, out_channels, 1, stride, 0,
                                                 false);
  }
}

template <typename Scalar>
Batch<Scalar> PreActBlock<Scalar>::forward(const ParameterSet<Scalar>& params, const Batch<Scalar>& x, Mode mode,
                                           LayerCache<Scalar>& cache) const {
  cache.children.assign(kSlots, {});
  auto& c = cache.children;
  const Batch<Scalar> a = relu1_->forward(params, bn1_->forward(params, x, mode, c[kBn1]), mode, c[kRelu1]);
  Batch<Scalar> h = conv1_->forward(params, a, mode, c[kConv1]);
  h = relu2_->forward(params, bn2_->forward(params, h, mode, c[kBn2]), mode, c[kRelu2]);
  h = conv2_->forward(params, h, mode, c[kConv2]);
  if (shortcut_) {
    h += shortcut_->forward(params, a, mode, c[kShortcut]);
  } else {
    h += x;
  }
  return h;
}

template <typename Scalar>
Batch<Scalar> PreActBlock<Scalar>::backward(const ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache,
                                            const Batch<Scalar>& grad_out, ParameterSet<Scalar>& grads) const {
  const auto& c = cache.children;
  Batch<Scalar> g = conv2_->backward(params, c[kConv2], grad_out, grads);
  g = bn2_->backward(params, c[kBn2], relu2_->backward(params, c[kRelu2], g, grads), grads);
  Batch<Scalar> ga = conv1_->backward(params, c[kConv1], g, grads);
  if (shortcut_) ga += shortcut_->backward(params, c[kShortcut], grad_out, grads);
  Batch<Scalar> gx = bn1_->backward(params, c[kBn1], relu1_->backward(params, c[kRelu1], ga, grads), grads);
  if (!shortcut_) gx += grad_out;
  return gx;
}

template <typename Scalar>
void PreActBlock<Scalar>::commit_statistics(ParameterSet<Scalar>& params, const LayerCache<Scalar>& cache) const {
  bn1_->commit_statistics(params, cache.children.at(kBn1));
  bn2_->commit_statistics(params, cache.children.at(kBn2));
}

#define BILEARN_INSTANTIATE_LAYERS(T) \
  template class Linear<T>;           \
  template class ReLU<T>;             \
  template class Conv2d<T>;           \
  template class MaxPool2d<T>;        \
  template class GlobalAvgPool<T>;    \
  template class BatchNorm<T>;        \
  template class Sequential<T>;       \
  template class PreActBlock<T>;

BILEARN_INSTANTIATE_LAYERS(float)
BILEARN_INSTANTIATE_LAYERS(double)

}  // namespace bilearn::nn

#pragma once

// Two-head classifier on a shared representation, with optional shallow
// distillation heads attached to intermediate backbone stages.

#include "bilearn/nn/layers.hpp"

#include <memory>
#include <string_view>

namespace bilearn {

enum class Backbone { kTinyMlp, kSmallCnn, kPreActResNet34 };

Backbone parse_backbone(std::string_view name);
std::string_view to_string(Backbone backbone);

struct ModelConfig {
  Backbone backbone = Backbone::kTinyMlp;
  int num_classes = 3;
  int num_shallow_heads = 0;  // 0 disables self-distillation
  int feature_dim = 64;
  double ema_decay = 0.999;

  void validate() const;
};

/// Maximum number of shallow heads a backbone can host (stages minus one).
int max_shallow_heads(Backbone backbone);

/// Batched head outputs; every matrix has one row per sample.
template <typename Scalar>
struct HeadOutputs {
  nn::Batch<Scalar> positive_logits;
  nn::Batch<Scalar> negative_logits;
  std::vector<nn::Batch<Scalar>> shallow_logits;
  std::vector<nn::Batch<Scalar>> shallow_features;  // already projected to deep_feature's width
  nn::Batch<Scalar> deep_feature;
};

/// Loss gradients with respect to HeadOutputs. Empty matrices mean zero.
template <typename Scalar>
struct HeadGradients {
  nn::Batch<Scalar> positive_logits;
  nn::Batch<Scalar> negative_logits;
  std::vector<nn::Batch<Scalar>> shallow_logits;
  std::vector<nn::Batch<Scalar>> shallow_features;
};

template <typename Scalar>
struct ForwardPass {
  HeadOutputs<Scalar> outputs;
  std::vector<nn::LayerCache<Scalar>> stage_caches;
  std::vector<nn::LayerCache<Scalar>> adapter_caches;
  std::vector<nn::LayerCache<Scalar>> shallow_caches;
  nn::LayerCache<Scalar> positive_cache;
  nn::LayerCache<Scalar> negative_cache;
};

/// Which part of the network a parameter belongs to.
enum class ParamOwner { kBackbone, kShallow, kPositiveHead, kNegativeHead };

template <typename Scalar>
class TwoHeadModel {
 public:
  TwoHeadModel(const ModelConfig& config, nn::FeatureShape input, std::uint64_t seed);

  const ModelConfig& config() const;
  nn::FeatureShape input_shape() const;

  nn::ParameterSet<Scalar>& parameters() { return params_; }
  const nn::ParameterSet<Scalar>& parameters() const { return params_; }

  ForwardPass<Scalar> forward(const nn::Batch<Scalar>& x, nn::Mode mode) const { return forward(params_, x, mode); }
  /// Forward with an external parameter set of identical layout (e.g. EMA shadow).
  ForwardPass<Scalar> forward(const nn::ParameterSet<Scalar>& params, const nn::Batch<Scalar>& x,
                              nn::Mode mode) const;

  /// Accumulates parameter gradients of the pass into `grads`.
  void backward(const ForwardPass<Scalar>& pass, const HeadGradients<Scalar>& head_grads,
                nn::ParameterSet<Scalar>& grads) const;

  /// Folds batch-norm statistics from a training pass into the live parameters.
  void commit_statistics(const ForwardPass<Scalar>& pass);

  ParamOwner owner(std::size_t param_index) const;

 private:
  struct Structure;
  std::shared_ptr<const Structure> structure_;
  nn::ParameterSet<Scalar> params_;
};

template <typename Scalar>
struct EmaState {
  nn::ParameterSet<Scalar> shadow;
  double decay = 0.999;
};

/// shadow <- decay * shadow + (1 - decay) * params, element-wise.
template <typename Scalar>
void ema_update_in_place(EmaState<Scalar>& ema, const nn::ParameterSet<Scalar>& params) {
  require(ema.decay >= 0.0 && ema.decay <= 1.0, "ema decay outside [0, 1]");
  require(ema.shadow.same_layout(params), "ema_update: parameter layout mismatch");
  const auto d = static_cast<Scalar>(ema.decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (ema.decay == 1.0) continue;
    if (ema.decay == 0.0) {
      ema.shadow[i] = params[i];
    } else {
      ema.shadow[i] = d * ema.shadow[i] + (Scalar(1) - d) * params[i];
    }
  }
}

template <typename Scalar>
EmaState<Scalar> ema_update(EmaState<Scalar> ema, const nn::ParameterSet<Scalar>& params) {
  ema_update_in_place(ema, params);
  return ema;
}

extern template class TwoHeadModel<float>;
extern template class TwoHeadModel<double>;

}  // namespace bilearn

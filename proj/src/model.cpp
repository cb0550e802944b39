#include "bilearn/model.hpp"

namespace bilearn {

Backbone parse_backbone(std::string_view name) {
  if (name == "tiny-mlp") return Backbone::kTinyMlp;
  if (name == "small-cnn") return Backbone::kSmallCnn;
  if (name == "preact-resnet34") return Backbone::kPreActResNet34;
  throw ValidationError("unknown backbone '" + std::string(name) +
                        "' (expected tiny-mlp, small-cnn or preact-resnet34)");
}

std::string_view to_string(Backbone backbone) {
  switch (backbone) {
    case Backbone::kTinyMlp: return "tiny-mlp";
    case Backbone::kSmallCnn: return "small-cnn";
    case Backbone::kPreActResNet34: return "preact-resnet34";
  }
  return "unknown";
}

int max_shallow_heads(Backbone backbone) {
  switch (backbone) {
    case Backbone::kTinyMlp: return 1;
    case Backbone::kSmallCnn: return 2;
    case Backbone::kPreActResNet34: return 3;
  }
  return 0;
}

void ModelConfig::validate() const {
  require(num_classes >= 2, "model.num_classes must be at least 2");
  require(feature_dim > 0, "model.feature_dim must be positive");
  require(num_shallow_heads >= 0 && num_shallow_heads <= max_shallow_heads(backbone),
          "model.shallow_heads must be in [0, " + std::to_string(max_shallow_heads(backbone)) + "] for " +
              std::string(to_string(backbone)));
  require(ema_decay >= 0.0 && ema_decay <= 1.0, "model.ema_decay must be in [0, 1]");
}

template <typename Scalar>
struct TwoHeadModel<Scalar>::Structure {
  ModelConfig config;
  nn::FeatureShape input;
  std::vector<nn::Sequential<Scalar>> stages;
  std::vector<nn::Sequential<Scalar>> adapters;
  std::vector<nn::Sequential<Scalar>> shallow_classifiers;
  std::unique_ptr<nn::Linear<Scalar>> positive_head;
  std::unique_ptr<nn::Linear<Scalar>> negative_head;
  std::vector<ParamOwner> owners;
};

namespace {

template <typename Scalar>
void tag(std::vector<ParamOwner>& owners, std::size_t param_count, ParamOwner owner) {
  owners.resize(param_count, owner);
}

template <typename Scalar>
std::vector<nn::Sequential<Scalar>> build_stages(const ModelConfig& cfg, nn::FeatureShape input,
                                                 nn::ParameterSet<Scalar>& params, std::mt19937_64& rng) {
  using nn::FeatureShape;
  std::vector<nn::Sequential<Scalar>> stages;
  const int fd = cfg.feature_dim;
  switch (cfg.backbone) {
    case Backbone::kTinyMlp: {
      constexpr int kHidden = 64;
      auto& s0 = stages.emplace_back(FeatureShape{input.flat()});
      s0.template emplace<nn::Linear<Scalar>>(params, rng, "backbone.fc1", input.flat(), kHidden);
      s0.template emplace<nn::ReLU<Scalar>>(FeatureShape{kHidden});
      auto& s1 = stages.emplace_back(FeatureShape{kHidden});
      s1.template emplace<nn::Linear<Scalar>>(params, rng, "backbone.fc2", kHidden, fd);
      s1.template emplace<nn::ReLU<Scalar>>(FeatureShape{fd});
      break;
    }
    case Backbone::kSmallCnn: {
      require(input.spatial(), "small-cnn needs image input, got " + nn::to_string(input));
      const int widths[3] = {16, 32, fd};
      FeatureShape shape = input;
      for (int b = 0; b < 3; ++b) {
        auto& s = stages.emplace_back(shape);
        const std::string name = "backbone.block" + std::to_string(b + 1);
        auto& conv = s.template emplace<nn::Conv2d<Scalar>>(params, rng, name + ".conv", shape, widths[b], 3, 1, 1, true);
        s.template emplace<nn::ReLU<Scalar>>(conv.output_shape());
        if (b < 2) {
          auto& pool = s.template emplace<nn::MaxPool2d<Scalar>>(conv.output_shape());
          shape = pool.output_shape();
        } else {
          s.template emplace<nn::GlobalAvgPool<Scalar>>(conv.output_shape());
        }
      }
      break;
    }
    case Backbone::kPreActResNet34: {
      require(input.spatial(), "preact-resnet34 needs image input, got " + nn::to_string(input));
      const int blocks[4] = {3, 4, 6, 3};
      const int widths[4] = {64, 128, 256, fd};
      auto& stem = stages.emplace_back(input);
      auto& conv = stem.template emplace<nn::Conv2d<Scalar>>(params, rng, "backbone.stem", input, 64, 3, 1, 1, false);
      FeatureShape shape = conv.output_shape();
      for (int layer = 0; layer < 4; ++layer) {
        auto& s = layer == 0 ? stem : stages.emplace_back(shape);
        for (int b = 0; b < blocks[layer]; ++b) {
          const int stride = (layer > 0 && b == 0) ? 2 : 1;
          const std::string name = "backbone.layer" + std::to_string(layer + 1) + "." + std::to_string(b);
          auto& block = s.template emplace<nn::PreActBlock<Scalar>>(params, rng, name, shape, widths[layer], stride);
          shape = block.output_shape();
        }
      }
      auto& last = stages.back();
      last.template emplace<nn::BatchNorm<Scalar>>(params, "backbone.bn_final", shape);
      last.template emplace<nn::ReLU<Scalar>>(shape);
      last.template emplace<nn::GlobalAvgPool<Scalar>>(shape);
      break;
    }
  }
  return stages;
}

}  // namespace

template <typename Scalar>
TwoHeadModel<Scalar>::TwoHeadModel(const ModelConfig& config, nn::FeatureShape input, std::uint64_t seed) {
  config.validate();
  require(input.flat() > 0, "model input shape must be non-empty");
  auto s = std::make_shared<Structure>();
  s->config = config;
  s->input = input;
  std::mt19937_64 rng(seed);

  s->stages = build_stages<Scalar>(config, input, params_, rng);
  tag<Scalar>(s->owners, params_.size(), ParamOwner::kBackbone);

  const int fd = config.feature_dim;
  require(s->stages.back().output_shape() == nn::FeatureShape{fd}, "backbone must end in a flat feature vector");
  for (int j = 0; j < config.num_shallow_heads; ++j) {
    const nn::FeatureShape stage_out = s->stages[static_cast<std::size_t>(j)].output_shape();
    const std::string name = "shallow" + std::to_string(j + 1);
    auto& adapter = s->adapters.emplace_back(stage_out);
    int width = stage_out.flat();
    if (stage_out.spatial()) {
      adapter.template emplace<nn::GlobalAvgPool<Scalar>>(stage_out);
      width = stage_out.channels;
    }
    adapter.template emplace<nn::Linear<Scalar>>(params_, rng, name + ".adapter", width, fd);
    auto& classifier = s->shallow_classifiers.emplace_back(nn::FeatureShape{fd});
    classifier.template emplace<nn::Linear<Scalar>>(params_, rng, name + ".classifier", fd, config.num_classes);
  }
  tag<Scalar>(s->owners, params_.size(), ParamOwner::kShallow);

  s->positive_head = std::make_unique<nn::Linear<Scalar>>(params_, rng, "positive_head", fd, config.num_classes);
  tag<Scalar>(s->owners, params_.size(), ParamOwner::kPositiveHead);
  s->negative_head = std::make_unique<nn::Linear<Scalar>>(params_, rng, "negative_head", fd, config.num_classes);
  tag<Scalar>(s->owners, params_.size(), ParamOwner::kNegativeHead);

  structure_ = std::move(s);
}

template <typename Scalar>
const ModelConfig& TwoHeadModel<Scalar>::config() const {
  return structure_->config;
}

template <typename Scalar>
nn::FeatureShape TwoHeadModel<Scalar>::input_shape() const {
  return structure_->input;
}

template <typename Scalar>
ParamOwner TwoHeadModel<Scalar>::owner(std::size_t param_index) const {
  return structure_->owners.at(param_index);
}

template <typename Scalar>
ForwardPass<Scalar> TwoHeadModel<Scalar>::forward(const nn::ParameterSet<Scalar>& params,
                                                  const nn::Batch<Scalar>& x, nn::Mode mode) const {
  const Structure& s = *structure_;
  require(params.same_layout(params_), "forward: parameter layout does not match the model");
  require(x.rows() > 0, "forward: empty batch");
  require(x.cols() == s.input.flat(), "forward: expected " + std::to_string(s.input.flat()) +
                                          " input features, got " + std::to_string(x.cols()));

  ForwardPass<Scalar> pass;
  pass.stage_caches.resize(s.stages.size());
  std::vector<nn::Batch<Scalar>> stage_out;
  stage_out.reserve(s.stages.size());
  const nn::Batch<Scalar>* h = &x;
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    stage_out.push_back(s.stages[i].forward(params, *h, mode, pass.stage_caches[i]));
    h = &stage_out.back();
  }

  auto& out = pass.outputs;
  out.deep_feature = stage_out.back();
  out.positive_logits = s.positive_head->forward(params, out.deep_feature, mode, pass.positive_cache);
  out.negative_logits = s.negative_head->forward(params, out.deep_feature, mode, pass.negative_cache);

  const std::size_t t = s.adapters.size();
  pass.adapter_caches.resize(t);
  pass.shallow_caches.resize(t);
  for (std::size_t j = 0; j < t; ++j) {
    out.shallow_features.push_back(s.adapters[j].forward(params, stage_out[j], mode, pass.adapter_caches[j]));
    out.shallow_logits.push_back(
        s.shallow_classifiers[j].forward(params, out.shallow_features.back(), mode, pass.shallow_caches[j]));
  }
  return pass;
}

template <typename Scalar>
void TwoHeadModel<Scalar>::backward(const ForwardPass<Scalar>& pass, const HeadGradients<Scalar>& g,
                                    nn::ParameterSet<Scalar>& grads) const {
  const Structure& s = *structure_;
  require(grads.same_layout(params_), "backward: gradient layout does not match the model");
  const auto& out = pass.outputs;
  const Eigen::Index n = out.deep_feature.rows();
  const Eigen::Index fd = out.deep_feature.cols();

  nn::Batch<Scalar> g_deep = nn::Batch<Scalar>::Zero(n, fd);
  if (g.positive_logits.size() > 0) {
    g_deep += s.positive_head->backward(params_, pass.positive_cache, g.positive_logits, grads);
  }
  if (g.negative_logits.size() > 0) {
    g_deep += s.negative_head->backward(params_, pass.negative_cache, g.negative_logits, grads);
  }

  const std::size_t t = s.adapters.size();
  std::vector<nn::Batch<Scalar>> g_stage(s.stages.size());
  for (std::size_t j = 0; j < t; ++j) {
    nn::Batch<Scalar> g_feat = nn::Batch<Scalar>::Zero(n, fd);
    bool any = false;
    if (j < g.shallow_logits.size() && g.shallow_logits[j].size() > 0) {
      g_feat += s.shallow_classifiers[j].backward(params_, pass.shallow_caches[j], g.shallow_logits[j], grads);
      any = true;
    }
    if (j < g.shallow_features.size() && g.shallow_features[j].size() > 0) {
      g_feat += g.shallow_features[j];
      any = true;
    }
    if (any) g_stage[j] = s.adapters[j].backward(params_, pass.adapter_caches[j], g_feat, grads);
  }

  nn::Batch<Scalar> g_h = std::move(g_deep);
  for (std::size_t i = s.stages.size(); i-- > 0;) {
    if (g_stage[i].size() > 0) g_h += g_stage[i];
    g_h = s.stages[i].backward(params_, pass.stage_caches[i], g_h, grads);
  }
}

template <typename Scalar>
void TwoHeadModel<Scalar>::commit_statistics(const ForwardPass<Scalar>& pass) {
  const Structure& s = *structure_;
  for (std::size_t i = 0; i < s.stages.size(); ++i) s.stages[i].commit_statistics(params_, pass.stage_caches[i]);
}

template class TwoHeadModel<float>;
template class TwoHeadModel<double>;

}  // namespace bilearn

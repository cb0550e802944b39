#include <doctest.h>

#include "bilearn/model.hpp"
#include "gradcheck.hpp"

#include <random>

using namespace bilearn;

namespace {

struct Probe {
  HeadGradients<double> g;
};

// Linear functional of every head output; its gradient is the probe itself.
double probe_value(const HeadOutputs<double>& out, const HeadGradients<double>& g) {
  double v = (out.positive_logits.array() * g.positive_logits.array()).sum() +
             (out.negative_logits.array() * g.negative_logits.array()).sum();
  for (std::size_t j = 0; j < g.shallow_logits.size(); ++j) {
    v += (out.shallow_logits[j].array() * g.shallow_logits[j].array()).sum();
    v += (out.shallow_features[j].array() * g.shallow_features[j].array()).sum();
  }
  return v;
}

HeadGradients<double> random_probe(const HeadOutputs<double>& out, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto fill = [&](const nn::Batch<double>& like) {
    nn::Batch<double> m(like.rows(), like.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
  };
  HeadGradients<double> g;
  g.positive_logits = fill(out.positive_logits);
  g.negative_logits = fill(out.negative_logits);
  for (std::size_t j = 0; j < out.shallow_logits.size(); ++j) {
    g.shallow_logits.push_back(fill(out.shallow_logits[j]));
    g.shallow_features.push_back(fill(out.shallow_features[j]));
  }
  return g;
}

nn::Batch<double> random_input(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Batch<double> x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  return x;
}

// Compares backward() against central differences on a subset of every tensor.
void check_network(const ModelConfig& cfg, nn::FeatureShape shape, int rows, int per_tensor) {
  TwoHeadModel<double> model(cfg, shape, 7);
  std::mt19937_64 rng(11);
  const auto x = random_input(rows, static_cast<Eigen::Index>(shape.flat()), rng);
  const auto pass = model.forward(x, nn::Mode::kTrain);
  const auto probe = random_probe(pass.outputs, rng);
  auto grads = model.parameters().zeros_like();
  model.backward(pass, probe, grads);

  const double step = 1e-5;
  int checked = 0, bad = 0;
  for (std::size_t p = 0; p < model.parameters().size(); ++p) {
    if (!model.parameters().entry(p).trainable()) continue;
    auto& value = model.parameters()[p];
    std::uniform_int_distribution<Eigen::Index> pick(0, value.size() - 1);
    for (int k = 0; k < per_tensor; ++k) {
      const Eigen::Index idx = pick(rng);
      const double orig = value.data()[idx];
      value.data()[idx] = orig + step;
      const double up = probe_value(model.forward(x, nn::Mode::kTrain).outputs, probe);
      value.data()[idx] = orig - step;
      const double down = probe_value(model.forward(x, nn::Mode::kTrain).outputs, probe);
      value.data()[idx] = orig;
      const double numeric = (up - down) / (2 * step);
      const double analytic = grads[p].data()[idx];
      ++checked;
      if (std::abs(analytic - numeric) > 1e-4 * std::max(1.0, std::abs(numeric))) {
        ++bad;
        MESSAGE(model.parameters().entry(p).name << "[" << idx << "] analytic " << analytic << " numeric " << numeric);
      }
    }
  }
  CHECK(checked > 0);
  CHECK(bad == 0);
}

}  // namespace

TEST_CASE("tiny-mlp gradients match finite differences") {
  ModelConfig cfg;
  cfg.backbone = Backbone::kTinyMlp;
  cfg.num_classes = 3;
  cfg.num_shallow_heads = 1;
  cfg.feature_dim = 16;
  check_network(cfg, nn::FeatureShape{8}, 5, 12);
}

TEST_CASE("small-cnn gradients match finite differences") {
  ModelConfig cfg;
  cfg.backbone = Backbone::kSmallCnn;
  cfg.num_classes = 4;
  cfg.num_shallow_heads = 2;
  cfg.feature_dim = 8;
  check_network(cfg, nn::FeatureShape{3, 8, 8}, 3, 6);
}

TEST_CASE("preact-resnet34 gradients match finite differences") {
  ModelConfig cfg;
  cfg.backbone = Backbone::kPreActResNet34;
  cfg.num_classes = 3;
  cfg.num_shallow_heads = 3;
  cfg.feature_dim = 16;
  check_network(cfg, nn::FeatureShape{3, 8, 8}, 2, 2);
}

TEST_CASE("head gradients stay in their own head") {
  ModelConfig cfg;
  cfg.num_shallow_heads = 1;
  cfg.feature_dim = 16;
  TwoHeadModel<double> model(cfg, nn::FeatureShape{6}, 3);
  std::mt19937_64 rng(5);
  const auto x = random_input(4, 6, rng);
  const auto pass = model.forward(x, nn::Mode::kTrain);
  auto full = random_probe(pass.outputs, rng);

  HeadGradients<double> only_neg;
  only_neg.negative_logits = full.negative_logits;
  auto grads = model.parameters().zeros_like();
  model.backward(pass, only_neg, grads);
  for (std::size_t p = 0; p < grads.size(); ++p) {
    const auto owner = model.owner(p);
    if (owner == ParamOwner::kPositiveHead || owner == ParamOwner::kShallow) {
      CHECK(grads[p].isZero(0.0));
    }
    if (owner == ParamOwner::kNegativeHead && model.parameters().entry(p).trainable()) {
      CHECK_FALSE(grads[p].isZero(0.0));
    }
  }

  HeadGradients<double> only_pos;
  only_pos.positive_logits = full.positive_logits;
  grads = model.parameters().zeros_like();
  model.backward(pass, only_pos, grads);
  for (std::size_t p = 0; p < grads.size(); ++p) {
    if (model.owner(p) == ParamOwner::kNegativeHead || model.owner(p) == ParamOwner::kShallow) {
      CHECK(grads[p].isZero(0.0));
    }
  }
}

TEST_CASE("eval forward does not depend on batch composition") {
  ModelConfig cfg;
  cfg.backbone = Backbone::kSmallCnn;
  cfg.num_shallow_heads = 1;
  cfg.feature_dim = 8;
  TwoHeadModel<double> model(cfg, nn::FeatureShape{3, 8, 8}, 1);
  std::mt19937_64 rng(2);
  const auto x = random_input(4, 192, rng);
  const auto all = model.forward(x, nn::Mode::kEval);
  const nn::Batch<double> first = x.topRows(1);
  const auto one = model.forward(first, nn::Mode::kEval);
  CHECK((all.outputs.positive_logits.topRows(1) - one.outputs.positive_logits).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ema update blends parameters and buffers") {
  ModelConfig cfg;
  cfg.backbone = Backbone::kSmallCnn;
  cfg.feature_dim = 8;
  TwoHeadModel<double> a(cfg, nn::FeatureShape{3, 8, 8}, 1);
  TwoHeadModel<double> b(cfg, nn::FeatureShape{3, 8, 8}, 2);
  EmaState<double> ema{a.parameters(), 0.9};
  const auto next = ema_update(ema, b.parameters());
  for (std::size_t p = 0; p < a.parameters().size(); ++p) {
    const Matrix<double> expect = 0.9 * a.parameters()[p] + 0.1 * b.parameters()[p];
    CHECK((next.shadow[p] - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  EmaState<double> frozen{a.parameters(), 1.0};
  CHECK(ema_update(frozen, b.parameters()).shadow == a.parameters());
  EmaState<double> copy{a.parameters(), 0.0};
  CHECK(ema_update(copy, b.parameters()).shadow == b.parameters());
}

TEST_CASE("model config validation") {
  ModelConfig cfg;
  cfg.num_shallow_heads = 2;  // tiny-mlp hosts one
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.num_shallow_heads = 0;
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(max_shallow_heads(Backbone::kPreActResNet34) == 3);
  CHECK(parse_backbone("small-cnn") == Backbone::kSmallCnn);
  CHECK_THROWS_AS(parse_backbone("vgg"), ValidationError);
}

#include "bilearn/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>

namespace bilearn {

namespace {

enum Stream : std::uint64_t {
  kInitStream = 1,
  kShuffleStream = 2,
  kComplementStream = 3,
  kSlackStream = 4,
  kDataStream = 5,
  kNoiseStream = 6,
  kAugmentSeedStream = 7,
};

std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t sub = 0) {
  auto rng = stream_rng(seed, stream, sub);
  return rng();
}

std::string num(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void sgd_step(nn::ParameterSet<float>& params, const nn::ParameterSet<float>& grads,
              nn::ParameterSet<float>& momentum, double lr, double mu, double wd) {
  const auto lr_f = static_cast<float>(lr);
  const auto mu_f = static_cast<float>(mu);
  const auto wd_f = static_cast<float>(wd);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.entry(i).trainable()) continue;
    momentum[i] = mu_f * momentum[i] + (grads[i] + wd_f * params[i]);
    params[i] -= lr_f * momentum[i];
  }
}

const Matrix<double>& primary_probs(const InferenceResult& r, HeadMode heads) {
  return heads == HeadMode::kNegativeOnly ? r.negative_probs : r.positive_probs;
}

}  // namespace

double cosine_lr(int epoch, const TrainConfig& cfg) {
  const int e = std::clamp(epoch, 0, cfg.t_max);
  return cfg.eta_min + (cfg.lr_init - cfg.eta_min) *
                           (1.0 + std::cos(std::numbers::pi * static_cast<double>(e) / cfg.t_max)) / 2.0;
}

TrainerState init_state(const RunConfig& config, const Dataset& train) {
  config.validate();
  require(train.num_classes() == config.model.num_classes, "dataset class count differs from model.num_classes");
  TrainerState s{
      .next_epoch = 0,
      .model = TwoHeadModel<float>(config.model, train.shape, derive_seed(config.train.seed, kInitStream)),
      .ema = {},
      .momentum = {},
      .slack = {},
      .weights = WeightTable::ones(train.size()),
      .corrected = {},
      .r_est = 0.0,
      .beta = 0.0,
      .history = {},
  };
  s.ema = {s.model.parameters(), config.model.ema_decay};
  s.momentum = s.model.parameters().zeros_like();

  const auto n = static_cast<Eigen::Index>(train.size());
  const Eigen::Index c = train.num_classes();
  std::mt19937_64 rng(derive_seed(config.train.seed, kSlackStream));
  std::normal_distribution<double> gauss(0.0, 1.0);
  s.slack.u.resize(n, c);
  s.slack.v.resize(n, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      s.slack.u(i, j) = static_cast<float>(std::abs(gauss(rng)) * config.train.sop_init_std);
      s.slack.v(i, j) = static_cast<float>(std::abs(gauss(rng)) * config.train.sop_init_std);
    }
  }
  s.slack.u_momentum = Matrix<float>::Zero(n, c);
  s.slack.v_momentum = Matrix<float>::Zero(n, c);
  return s;
}

InferenceResult infer(const TwoHeadModel<float>& model, const nn::ParameterSet<float>& params,
                      const Dataset& dataset, HeadMode heads, std::size_t batch_size) {
  const auto n = static_cast<Eigen::Index>(dataset.size());
  const Eigen::Index c = dataset.num_classes();
  InferenceResult r;
  r.positive_probs.resize(n, c);
  r.negative_probs.resize(n, c);
  for (Eigen::Index start = 0; start < n; start += static_cast<Eigen::Index>(batch_size)) {
    const Eigen::Index rows = std::min<Eigen::Index>(static_cast<Eigen::Index>(batch_size), n - start);
    const nn::Batch<float> x = dataset.features.middleRows(start, rows);
    const auto pass = model.forward(params, x, nn::Mode::kEval);
    r.positive_probs.middleRows(start, rows) = softmax_rows<double>(pass.outputs.positive_logits.cast<double>());
    r.negative_probs.middleRows(start, rows) = softmax_rows<double>(pass.outputs.negative_logits.cast<double>());
  }
  r.neg_prob_on_noisy_label.resize(dataset.size());
  r.pos_prob_on_noisy_label.resize(dataset.size());
  r.corrected.resize(dataset.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Label y = dataset.noisy_labels[static_cast<std::size_t>(i)];
    r.neg_prob_on_noisy_label[static_cast<std::size_t>(i)] = std::clamp(r.negative_probs(i, y), 0.0, 1.0);
    r.pos_prob_on_noisy_label[static_cast<std::size_t>(i)] = std::clamp(r.positive_probs(i, y), 0.0, 1.0);
    const auto p_pos = ProbabilityVector<double>::trusted(r.positive_probs.row(i).transpose());
    const auto p_neg = ProbabilityVector<double>::trusted(r.negative_probs.row(i).transpose());
    switch (heads) {
      case HeadMode::kBoth: r.corrected[static_cast<std::size_t>(i)] = corrected_label(p_pos, p_neg); break;
      case HeadMode::kNegativeOnly: r.corrected[static_cast<std::size_t>(i)] = corrected_label(p_neg, p_neg); break;
      case HeadMode::kPositiveOnly: r.corrected[static_cast<std::size_t>(i)] = corrected_label(p_pos, p_pos); break;
    }
  }
  return r;
}

double accuracy(const Matrix<double>& probs, std::span<const Label> labels) {
  require(static_cast<std::size_t>(probs.rows()) == labels.size(), "accuracy: row count differs from labels");
  require(!labels.empty(), "accuracy: empty input");
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) hits += argmax(probs.row(i)) == labels[static_cast<std::size_t>(i)];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

void apply_refresh(TrainerState& state, const InferenceResult& inference, const TrainConfig& cfg) {
  if (cfg.heads == HeadMode::kPositiveOnly) return;
  state.weights = update_weights(inference.neg_prob_on_noisy_label);
  state.corrected = CorrectedLabels(inference.corrected);
  state.r_est = estimate_noise_ratio(inference.neg_prob_on_noisy_label, cfg.threshold);
  state.beta = beta_from_ratio(state.r_est, cfg.beta_scale);
}

EpochReport train_epoch(TrainerState& state, const Dataset& train, const AugmentSpec& augment,
                        const TrainConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  const int epoch = state.next_epoch;
  const auto n_total = train.size();
  require(n_total > 0, "train_epoch: empty dataset");
  require(state.weights.size() == n_total, "train_epoch: weight table covers " + std::to_string(state.weights.size()) +
                                               " samples but the dataset has " + std::to_string(n_total));
  require(!state.corrected.defined() || state.corrected.size() == n_total, "train_epoch: corrected labels size mismatch");

  const bool use_pos = cfg.heads != HeadMode::kNegativeOnly;
  const bool use_neg = cfg.heads != HeadMode::kPositiveOnly;
  const int c = train.num_classes();
  const LossWeights lw = [&] {
    LossWeights w = cfg.loss;
    w.beta = state.beta;
    return w;
  }();
  const double lr = cosine_lr(epoch, cfg);
  const std::uint64_t aug_seed = derive_seed(cfg.seed, kAugmentSeedStream);

  std::vector<std::size_t> order(n_total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffle_rng = stream_rng(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  auto comp_rng = stream_rng(cfg.seed, kComplementStream, static_cast<std::uint64_t>(epoch));

  nn::ParameterSet<float> grads = state.model.parameters().zeros_like();
  double sum_pl = 0.0, sum_nl = 0.0, sum_sd = 0.0;
  std::size_t correct = 0;
  const auto d = static_cast<Eigen::Index>(train.shape.flat());

  for (std::size_t start = 0; start < n_total; start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n_total - start);
    const auto rows = static_cast<Eigen::Index>(n);
    const double inv_n = 1.0 / static_cast<double>(n);

    nn::Batch<float> x1(rows, d), x2(rows, d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto [a, b] = two_view_augment(train.example(order[start + i]), augment, train.shape, epoch, aug_seed);
      x1.row(static_cast<Eigen::Index>(i)) = a.transpose();
      x2.row(static_cast<Eigen::Index>(i)) = b.transpose();
    }

    const ForwardPass<float> pass = state.model.forward(x1, nn::Mode::kTrain);
    const auto& out = pass.outputs;
    const Matrix<double> p_pos = softmax_rows<double>(out.positive_logits.cast<double>());
    const Matrix<double> p_neg = softmax_rows<double>(out.negative_logits.cast<double>());
    const std::size_t t = use_pos ? out.shallow_logits.size() : 0;
    std::vector<Matrix<double>> p_shallow(t);
    for (std::size_t j = 0; j < t; ++j) p_shallow[j] = softmax_rows<double>(out.shallow_logits[j].cast<double>());

    Matrix<double> g_pos = Matrix<double>::Zero(rows, c);
    Matrix<double> g_neg = Matrix<double>::Zero(rows, c);
    std::vector<Matrix<double>> g_shallow(t, Matrix<double>::Zero(rows, c));
    std::vector<Matrix<double>> g_feat(t, Matrix<double>::Zero(rows, out.deep_feature.cols()));
    Matrix<double> g_u = Matrix<double>::Zero(rows, c), g_v = Matrix<double>::Zero(rows, c);

    double batch_pl = 0.0, batch_nl = 0.0, batch_sd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const std::size_t idx = order[start + i];
      const Label y = train.noisy_labels[idx];
      const double w = state.weights.at(static_cast<std::int64_t>(idx));
      const auto pp = ProbabilityVector<double>::trusted(p_pos.row(r).transpose());
      const auto pn = ProbabilityVector<double>::trusted(p_neg.row(r).transpose());

      if (use_pos) {
        batch_pl += w * cross_entropy(pp, y);
        g_pos.row(r) += (w * inv_n) * cross_entropy_grad(pp, y).transpose();
        if (lw.beta > 0.0) {
          const Vector<double> u = state.slack.u.row(static_cast<Eigen::Index>(idx)).transpose().cast<double>();
          const Vector<double> v = state.slack.v.row(static_cast<Eigen::Index>(idx)).transpose().cast<double>();
          batch_pl += lw.beta * w * sop_loss(pp, y, u, v);
          const auto sg = sop_grad(pp, y, u, v);
          const double scale = lw.beta * w * inv_n;
          g_pos.row(r) += scale * sg.logits.transpose();
          g_u.row(r) = scale * sg.u.transpose();
          g_v.row(r) = scale * sg.v.transpose();
        }
        const Vector<double> deep = out.deep_feature.row(r).transpose().cast<double>();
        for (std::size_t j = 0; j < t; ++j) {
          const auto ps = ProbabilityVector<double>::trusted(p_shallow[j].row(r).transpose());
          const Vector<double> feat = out.shallow_features[j].row(r).transpose().cast<double>();
          batch_sd += w * cross_entropy(ps, y) + lw.alpha * kl_divergence(ps, pp) + lw.lambda * feature_l2(feat, deep);
          g_shallow[j].row(r) += (w * inv_n) * cross_entropy_grad(ps, y).transpose() +
                                 (lw.alpha * inv_n) * kl_divergence_grad_first(ps, pp).transpose();
          g_feat[j].row(r) += (lw.lambda * inv_n) * feature_l2_grad(feat, deep).transpose();
        }
      }
      if (use_neg) {
        const auto corrected = state.corrected.at(static_cast<std::int64_t>(idx));
        const Label comp = sample_complementary(y, corrected, c, comp_rng);
        batch_nl += negative_loss(pn, comp);
        g_neg.row(r) += inv_n * negative_loss_grad(pn, comp).transpose();
      }
      const Label predicted = use_pos ? argmax(pp.values()) : argmax(pn.values());
      correct += predicted == y;
    }
    batch_pl *= inv_n;
    batch_nl *= inv_n;
    batch_sd *= inv_n;

    if (use_pos && lw.delta > 0.0) {
      batch_pl += lw.delta * class_balance_loss(p_pos);
      g_pos += lw.delta * class_balance_grad(p_pos);
    }

    grads = state.model.parameters().zeros_like();
    if (use_pos && lw.gamma > 0.0) {
      const ForwardPass<float> pass2 = state.model.forward(x2, nn::Mode::kTrain);
      const Matrix<double> p_view = softmax_rows<double>(pass2.outputs.positive_logits.cast<double>());
      Matrix<double> g_view(rows, c);
      double cons = 0.0;
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto target = ProbabilityVector<double>::trusted(p_pos.row(r).transpose());
        const auto view = ProbabilityVector<double>::trusted(p_view.row(r).transpose());
        cons += kl_divergence(target, view);
        g_view.row(r) = (lw.gamma * inv_n) * kl_divergence_grad_second(target, view).transpose();
      }
      batch_pl += lw.gamma * cons * inv_n;
      HeadGradients<float> g2;
      g2.positive_logits = g_view.cast<float>();
      state.model.backward(pass2, g2, grads);
    }

    HeadGradients<float> g;
    if (use_pos) g.positive_logits = g_pos.cast<float>();
    if (use_neg) g.negative_logits = g_neg.cast<float>();
    for (std::size_t j = 0; j < t; ++j) {
      g.shallow_logits.push_back(g_shallow[j].cast<float>());
      g.shallow_features.push_back(g_feat[j].cast<float>());
    }
    state.model.backward(pass, g, grads);
    state.model.commit_statistics(pass);
    sgd_step(state.model.parameters(), grads, state.momentum, lr, cfg.momentum, cfg.weight_decay);

    if (use_pos && lw.beta > 0.0) {
      // Slack rows only move when their sample is in the batch.
      const auto slack_lr = static_cast<float>(lr * cfg.sop_lr_scale);
      const auto mu = static_cast<float>(cfg.momentum);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto idx = static_cast<Eigen::Index>(order[start + i]);
        auto& s = state.slack;
        s.u_momentum.row(idx) = mu * s.u_momentum.row(idx) + g_u.row(r).cast<float>();
        s.v_momentum.row(idx) = mu * s.v_momentum.row(idx) + g_v.row(r).cast<float>();
        s.u.row(idx) = (s.u.row(idx) - slack_lr * s.u_momentum.row(idx)).cwiseMax(0.0f).cwiseMin(1.0f);
        s.v.row(idx) = (s.v.row(idx) - slack_lr * s.v_momentum.row(idx)).cwiseMax(0.0f).cwiseMin(1.0f);
      }
    }
    ema_update_in_place(state.ema, state.model.parameters());

    sum_pl += batch_pl * static_cast<double>(n);
    sum_nl += batch_nl * static_cast<double>(n);
    sum_sd += batch_sd * static_cast<double>(n);
  }

  EpochReport report;
  report.epoch = epoch;
  const auto total = static_cast<double>(n_total);
  report.loss_pl = sum_pl / total;
  report.loss_nl = sum_nl / total;
  report.loss_sd = sum_sd / total;
  report.loss_total = total_loss(report.loss_pl, report.loss_nl, report.loss_sd);
  report.train_acc = static_cast<double>(correct) / total;
  report.r_est = state.r_est;
  report.beta = state.beta;
  report.lr = lr;
  report.warmup = epoch < cfg.warmup_epochs;
  const auto& wv = state.weights.values();
  report.mean_weight = std::accumulate(wv.begin(), wv.end(), 0.0) / total;
  // Timing stays out of the state unless asked for, so checkpoints are reproducible.
  if (cfg.record_wall_clock) {
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {

nlohmann::json report_to_json(const EpochReport& r) {
  return {{"epoch", r.epoch},     {"loss_total", r.loss_total}, {"loss_pl", r.loss_pl},
          {"loss_nl", r.loss_nl}, {"loss_sd", r.loss_sd},       {"train_acc", r.train_acc},
          {"test_acc", r.test_acc ? nlohmann::json(*r.test_acc) : nlohmann::json(nullptr)},
          {"r_est", r.r_est},     {"beta", r.beta},             {"lr", r.lr},
          {"seconds", r.seconds}, {"mean_weight", r.mean_weight}, {"warmup", r.warmup}};
}

EpochReport report_from_json(const nlohmann::json& j) {
  EpochReport r;
  r.epoch = j.at("epoch").get<int>();
  r.loss_total = j.at("loss_total").get<double>();
  r.loss_pl = j.at("loss_pl").get<double>();
  r.loss_nl = j.at("loss_nl").get<double>();
  r.loss_sd = j.at("loss_sd").get<double>();
  r.train_acc = j.at("train_acc").get<double>();
  if (!j.at("test_acc").is_null()) r.test_acc = j.at("test_acc").get<double>();
  r.r_est = j.at("r_est").get<double>();
  r.beta = j.at("beta").get<double>();
  r.lr = j.at("lr").get<double>();
  r.seconds = j.at("seconds").get<double>();
  r.mean_weight = j.at("mean_weight").get<double>();
  r.warmup = j.at("warmup").get<bool>();
  return r;
}

void put_params(Checkpoint& ckpt, const std::string& prefix, const nn::ParameterSet<float>& params) {
  for (const auto& p : params) ckpt.put(prefix + "/" + p.name, p.value);
}

void get_params(const Checkpoint& ckpt, const std::string& prefix, nn::ParameterSet<float>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = params.entry(i);
    Matrix<float> m = ckpt.f32(prefix + "/" + entry.name);
    if (m.rows() != entry.value.rows() || m.cols() != entry.value.cols()) {
      throw RuntimeError("checkpoint tensor " + prefix + "/" + entry.name + " has the wrong shape");
    }
    params[i] = std::move(m);
  }
}

Matrix<float> checked(Matrix<float> m, const Matrix<float>& like, const std::string& name) {
  if (m.rows() != like.rows() || m.cols() != like.cols()) throw RuntimeError("checkpoint tensor " + name + " has the wrong shape");
  return m;
}

}  // namespace

Checkpoint to_checkpoint(const TrainerState& state, const std::string& config_snapshot) {
  Checkpoint ckpt;
  ckpt.meta["next_epoch"] = state.next_epoch;
  ckpt.meta["config_snapshot"] = config_snapshot;
  ckpt.meta["ema_decay"] = state.ema.decay;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : state.history) history.push_back(report_to_json(r));
  ckpt.meta["history"] = history;

  put_params(ckpt, "params", state.model.parameters());
  put_params(ckpt, "ema", state.ema.shadow);
  put_params(ckpt, "momentum", state.momentum);
  ckpt.put("slack/u", state.slack.u);
  ckpt.put("slack/v", state.slack.v);
  ckpt.put("slack/u_momentum", state.slack.u_momentum);
  ckpt.put("slack/v_momentum", state.slack.v_momentum);
  const auto& w = state.weights.values();
  ckpt.put("weights", Matrix<double>(Eigen::Map<const Matrix<double>>(w.data(), static_cast<Eigen::Index>(w.size()), 1)));
  ckpt.put("corrected", state.corrected.values());
  Matrix<double> scalars(2, 1);
  scalars << state.r_est, state.beta;
  ckpt.put("scalars", scalars);
  return ckpt;
}

TrainerState from_checkpoint(const Checkpoint& ckpt, const RunConfig& config, const Dataset& train) {
  TrainerState s = init_state(config, train);
  s.next_epoch = ckpt.meta.at("next_epoch").get<int>();
  s.ema.decay = ckpt.meta.at("ema_decay").get<double>();
  for (const auto& r : ckpt.meta.at("history")) s.history.push_back(report_from_json(r));
  get_params(ckpt, "params", s.model.parameters());
  get_params(ckpt, "ema", s.ema.shadow);
  get_params(ckpt, "momentum", s.momentum);
  s.slack.u = checked(ckpt.f32("slack/u"), s.slack.u, "slack/u");
  s.slack.v = checked(ckpt.f32("slack/v"), s.slack.v, "slack/v");
  s.slack.u_momentum = checked(ckpt.f32("slack/u_momentum"), s.slack.u_momentum, "slack/u_momentum");
  s.slack.v_momentum = checked(ckpt.f32("slack/v_momentum"), s.slack.v_momentum, "slack/v_momentum");
  const Matrix<double> w = ckpt.f64("weights");
  if (static_cast<std::size_t>(w.size()) != train.size()) throw RuntimeError("checkpoint weight table size mismatch");
  s.weights = WeightTable::from(std::vector<double>(w.data(), w.data() + w.size()));
  s.corrected = CorrectedLabels(ckpt.i32("corrected"));
  const Matrix<double> scalars = ckpt.f64("scalars");
  s.r_est = scalars(0, 0);
  s.beta = scalars(1, 0);
  return s;
}

// ---------------------------------------------------------------------------
// Datasets and run orchestration

Datasets build_datasets(const RunConfig& config) {
  config.validate();
  const auto& dc = config.data;
  const std::uint64_t seed = config.train.seed;
  Datasets out;
  if (dc.source == DataSource::kBlobs) {
    out.train = make_gaussian_blobs(dc.n, dc.classes, dc.dim, dc.separation, derive_seed(seed, kDataStream, 0));
    if (dc.test_n > 0) {
      out.test = make_gaussian_blobs(dc.test_n, dc.classes, dc.dim, dc.separation, derive_seed(seed, kDataStream, 1));
    }
    // Raw blobs have norms near the separation; standardizing keeps the
    // usual learning rates stable for the MLP.
    const auto scaler = FeatureScaler::fit(out.train);
    out.train = scaler.apply(std::move(out.train));
    if (out.test) out.test = scaler.apply(std::move(*out.test));
  } else {
    const bool ten = dc.source == DataSource::kCifar10;
    const auto variant = ten ? CifarVariant::kCifar10 : CifarVariant::kCifar100;
    std::vector<std::filesystem::path> train_files;
    if (ten) {
      for (int b = 1; b <= 5; ++b) train_files.push_back(dc.path / ("data_batch_" + std::to_string(b) + ".bin"));
    } else {
      train_files.push_back(dc.path / "train.bin");
    }
    const std::vector<std::filesystem::path> test_files{dc.path / (ten ? "test_batch.bin" : "test.bin")};
    out.train = load_cifar_binary(train_files, variant, dc.subset);
    if (std::filesystem::exists(test_files.front())) out.test = load_cifar_binary(test_files, variant, dc.test_subset);
  }
  NoiseSpec noise{config.noise.kind, config.noise.rate, derive_seed(seed, kNoiseStream), config.noise.sidecar};
  out.train = apply_noise(std::move(out.train), noise);
  out.train.validate();
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochReport> history, bool wall_clock) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << "epoch,loss_total,loss_pl,loss_nl,loss_sd,train_acc,test_acc,r_est,beta,lr,seconds\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << num(r.loss_total) << ',' << num(r.loss_pl) << ',' << num(r.loss_nl) << ','
        << num(r.loss_sd) << ',' << num(r.train_acc) << ',' << (r.test_acc ? num(*r.test_acc) : std::string()) << ','
        << num(r.r_est) << ',' << num(r.beta) << ',' << num(r.lr) << ',' << num(wall_clock ? r.seconds : 0.0) << '\n';
  }
  if (!out) throw RuntimeError("failed writing " + path.string());
}

void write_weight_dump(const std::filesystem::path& path, const WeightTable& weights,
                       std::span<const double> neg_probs, std::span<const Label> corrected) {
  require(weights.size() == neg_probs.size() && corrected.size() == neg_probs.size(), "weight dump: size mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << "index,weight,neg_prob_on_noisy_label,corrected_label\n";
  for (std::size_t i = 0; i < neg_probs.size(); ++i) {
    out << i << ',' << num(weights.values()[i]) << ',' << num(neg_probs[i]) << ',' << corrected[i] << '\n';
  }
  if (!out) throw RuntimeError("failed writing " + path.string());
}

namespace {

const std::vector<std::string>& artifact_names() {
  static const std::vector<std::string> names{"config_snapshot", "metrics.csv",      "probs_final.csv",
                                              "weights_final.csv", "noise_mask.csv", "checkpoint_final",
                                              "checkpoint_last",  "dataset_manifest.csv", "manifest.json",
                                              // written later by detect / sweep / report
                                              "detection.json", "sweep.csv", "sweep_f1.svg", "report"};
  return names;
}

void prepare_run_dir(const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<fs::path> existing;
  for (const auto& name : artifact_names()) {
    if (fs::exists(dir / name)) existing.push_back(dir / name);
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto fname = entry.path().filename().string();
    if (fname.rfind("weights_epoch_", 0) == 0) existing.push_back(entry.path());
  }
  if (existing.empty()) return;
  if (!force) {
    throw ValidationError("run directory " + dir.string() + " already holds a run; pass --force to overwrite");
  }
  for (const auto& p : existing) fs::remove_all(p);
}

void write_probs(const std::filesystem::path& path, const Dataset& d, const InferenceResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << "index,noisy_label,clean_label,neg_prob,pos_prob,corrected_label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << i << ',' << d.noisy_labels[i] << ',';
    if (d.clean_labels) out << (*d.clean_labels)[i];
    out << ',' << num(r.neg_prob_on_noisy_label[i]) << ',' << num(r.pos_prob_on_noisy_label[i]) << ','
        << r.corrected[i] << '\n';
  }
  if (!out) throw RuntimeError("failed writing " + path.string());
}

void write_noise_mask(const std::filesystem::path& path, const Dataset& d, std::span<const double> neg_probs,
                      double threshold) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << "index,noisy_label,neg_prob,flag_noisy,truth_noisy\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << i << ',' << d.noisy_labels[i] << ',' << num(neg_probs[i]) << ',' << (neg_probs[i] < threshold ? 1 : 0) << ',';
    if (d.clean_labels) out << (d.noisy_labels[i] != (*d.clean_labels)[i] ? 1 : 0);
    out << '\n';
  }
  if (!out) throw RuntimeError("failed writing " + path.string());
}

void write_manifest(const std::filesystem::path& dir, const RunConfig& config, bool completed,
                    const std::vector<std::filesystem::path>& files) {
  nlohmann::json j;
  j["name"] = config.name;
  j["status"] = completed ? "completed" : "interrupted";
  j["config_snapshot"] = "config_snapshot";
  nlohmann::json list = nlohmann::json::array();
  for (const auto& f : files) list.push_back(f.filename().string());
  j["artifacts"] = list;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << '\n';
}

}  // namespace

RunArtifacts run(const RunConfig& config, const Datasets& data, const RunOptions& options) {
  namespace fs = std::filesystem;
  config.validate();
  const TrainConfig& cfg = config.train;
  const Dataset& train = data.train;
  const fs::path dir = options.run_dir;
  require(!dir.empty(), "run directory not set");
  const std::string snapshot = format_flat_config(to_flat(config));

  std::optional<TrainerState> state;
  if (options.resume) {
    const fs::path last = dir / "checkpoint_last";
    if (!fs::exists(last)) throw RuntimeError("cannot resume: " + last.string() + " does not exist");
    const Checkpoint ckpt = Checkpoint::load(last);
    if (ckpt.meta.at("config_snapshot").get<std::string>() != snapshot) {
      throw ValidationError("cannot resume: configuration differs from the checkpointed run");
    }
    state = from_checkpoint(ckpt, config, train);
  } else {
    prepare_run_dir(dir, options.force);
    state = init_state(config, train);
  }

  std::vector<fs::path> files;
  {
    std::ofstream snap(dir / "config_snapshot", std::ios::trunc);
    if (!snap) throw RuntimeError("cannot write " + (dir / "config_snapshot").string());
    snap << snapshot;
  }
  files.push_back(dir / "config_snapshot");
  write_dataset_manifest(dir / "dataset_manifest.csv", train);
  files.push_back(dir / "dataset_manifest.csv");

  const AugmentSpec augment = make_augment_spec(train, cfg.jitter);
  RunArtifacts artifacts;
  artifacts.run_dir = dir;

  while (state->next_epoch < cfg.epochs) {
    const int e = state->next_epoch;
    if (e >= cfg.warmup_epochs && cfg.heads != HeadMode::kPositiveOnly) {
      const InferenceResult inf = infer(state->model, state->ema.shadow, train, cfg.heads);
      apply_refresh(*state, inf, cfg);
      if (cfg.dump_weights) {
        char name[64];
        std::snprintf(name, sizeof(name), "weights_epoch_%03d.csv", e);
        write_weight_dump(dir / name, state->weights, inf.neg_prob_on_noisy_label, inf.corrected);
      }
    }
    EpochReport report = train_epoch(*state, train, augment, cfg);
    if (data.test && data.test->has_clean_labels()) {
      const InferenceResult test_inf = infer(state->model, state->ema.shadow, *data.test, cfg.heads);
      report.test_acc = accuracy(primary_probs(test_inf, cfg.heads), *data.test->clean_labels);
    }
    state->history.push_back(report);
    state->next_epoch = e + 1;
    write_metrics_csv(dir / "metrics.csv", state->history, cfg.record_wall_clock);
    if (!options.quiet) {
      std::printf("epoch %3d  loss %.4f (pl %.4f nl %.4f sd %.4f)  acc %.4f  test %s  r %.3f  beta %.3f  lr %.5f\n",
                  report.epoch, report.loss_total, report.loss_pl, report.loss_nl, report.loss_sd, report.train_acc,
                  report.test_acc ? std::to_string(*report.test_acc).c_str() : "-", report.r_est, report.beta,
                  report.lr);
      std::fflush(stdout);
    }
    if (options.on_epoch) options.on_epoch(report, *state);

    const bool stopping = options.stop_after_epoch && state->next_epoch >= *options.stop_after_epoch &&
                          state->next_epoch < cfg.epochs;
    const bool periodic = cfg.checkpoint_every > 0 && state->next_epoch % cfg.checkpoint_every == 0;
    if (stopping || periodic) to_checkpoint(*state, snapshot).save(dir / "checkpoint_last");
    if (stopping) {
      files.push_back(dir / "metrics.csv");
      files.push_back(dir / "checkpoint_last");
      write_manifest(dir, config, false, files);
      artifacts.history = state->history;
      artifacts.final_weights = state->weights;
      artifacts.files = files;
      return artifacts;
    }
  }

  const InferenceResult final_inf = infer(state->model, state->ema.shadow, train, cfg.heads);
  if (state->history.empty()) write_metrics_csv(dir / "metrics.csv", state->history, cfg.record_wall_clock);
  files.push_back(dir / "metrics.csv");
  write_probs(dir / "probs_final.csv", train, final_inf);
  files.push_back(dir / "probs_final.csv");
  write_weight_dump(dir / "weights_final.csv", state->weights, final_inf.neg_prob_on_noisy_label, final_inf.corrected);
  files.push_back(dir / "weights_final.csv");
  write_noise_mask(dir / "noise_mask.csv", train, final_inf.neg_prob_on_noisy_label, cfg.threshold);
  files.push_back(dir / "noise_mask.csv");
  to_checkpoint(*state, snapshot).save(dir / "checkpoint_final");
  files.push_back(dir / "checkpoint_final");
  write_manifest(dir, config, true, files);
  files.push_back(dir / "manifest.json");

  artifacts.history = state->history;
  artifacts.final_inference = final_inf;
  artifacts.final_weights = state->weights;
  artifacts.completed = true;
  artifacts.files = files;
  return artifacts;
}

}  // namespace bilearn

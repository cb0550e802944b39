#include "bilearn/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace bilearn {

HeadMode parse_head_mode(std::string_view name) {
  if (name == "both") return HeadMode::kBoth;
  if (name == "positive_only") return HeadMode::kPositiveOnly;
  if (name == "negative_only") return HeadMode::kNegativeOnly;
  throw ValidationError("unknown head mode '" + std::string(name) + "' (expected both, positive_only, negative_only)");
}

std::string_view to_string(HeadMode mode) {
  switch (mode) {
    case HeadMode::kBoth: return "both";
    case HeadMode::kPositiveOnly: return "positive_only";
    case HeadMode::kNegativeOnly: return "negative_only";
  }
  return "both";
}

namespace {

DataSource parse_source(std::string_view name) {
  if (name == "blobs") return DataSource::kBlobs;
  if (name == "cifar10") return DataSource::kCifar10;
  if (name == "cifar100") return DataSource::kCifar100;
  throw ValidationError("data.source: unknown source '" + std::string(name) + "' (expected blobs, cifar10, cifar100)");
}

std::string_view source_name(DataSource s) {
  switch (s) {
    case DataSource::kBlobs: return "blobs";
    case DataSource::kCifar10: return "cifar10";
    case DataSource::kCifar100: return "cifar100";
  }
  return "blobs";
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

class Reader {
 public:
  explicit Reader(const FlatConfig& flat) : flat_(flat) {}

  const std::string& raw(const std::string& key) const {
    const auto it = flat_.find(key);
    if (it == flat_.end()) throw ValidationError("config key '" + key + "' is missing");
    return it->second;
  }

  template <typename T>
  T integer(const std::string& key) const {
    const std::string& v = raw(key);
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
      throw ValidationError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
  }

  double real(const std::string& key) const {
    const std::string& v = raw(key);
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
      throw ValidationError("config key '" + key + "': expected a finite number, got '" + v + "'");
    }
    return out;
  }

  bool boolean(const std::string& key) const {
    const std::string& v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config key '" + key + "': expected true or false, got '" + v + "'");
  }

  template <typename F>
  auto parsed(const std::string& key, F&& parse) const {
    try {
      return parse(raw(key));
    } catch (const ValidationError& e) {
      const std::string what = e.what();
      if (what.rfind(key, 0) == 0) throw;
      throw ValidationError("config key '" + key + "': " + what);
    }
  }

 private:
  const FlatConfig& flat_;
};

void field_check(bool ok, const std::string& key, const std::string& message) {
  if (!ok) throw ValidationError("config key '" + key + "': " + message);
}

RunConfig desk_blobs() {
  RunConfig c;
  c.name = "desk_blobs";
  c.data.source = DataSource::kBlobs;
  c.data.n = 3000;
  c.data.classes = 3;
  c.data.dim = 8;
  c.data.separation = 6.0;
  c.data.test_n = 1000;
  c.noise.kind = NoiseKind::kSymmetric;
  c.noise.rate = 0.4;
  c.model.backbone = Backbone::kTinyMlp;
  c.model.num_classes = 3;
  c.model.num_shallow_heads = 1;
  c.model.feature_dim = 64;
  c.model.ema_decay = 0.99;
  c.train.epochs = 60;
  c.train.warmup_epochs = 5;
  c.train.t_max = 55;
  // 24 steps per epoch, so epoch counts still resolve convergence speed.
  c.train.batch_size = 128;
  c.train.lr_init = 0.01;
  return c;
}

RunConfig desk_cifar_subset() {
  RunConfig c;
  c.name = "desk_cifar_subset";
  c.data.source = DataSource::kCifar10;
  c.data.path = "data/cifar-10-batches-bin";
  c.data.subset = 5000;
  c.data.test_subset = 1000;
  c.data.classes = 10;
  c.noise.kind = NoiseKind::kSymmetric;
  c.noise.rate = 0.4;
  c.model.backbone = Backbone::kSmallCnn;
  c.model.num_classes = 10;
  c.model.num_shallow_heads = 2;
  c.model.feature_dim = 64;
  c.model.ema_decay = 0.99;
  c.train.epochs = 60;
  c.train.warmup_epochs = 5;
  c.train.t_max = 55;
  c.train.batch_size = 128;
  return c;
}

RunConfig paper_full(bool hundred) {
  RunConfig c;
  c.name = hundred ? "paper_full_cifar100" : "paper_full";
  c.data.source = hundred ? DataSource::kCifar100 : DataSource::kCifar10;
  c.data.path = hundred ? "data/cifar-100-binary" : "data/cifar-10-batches-bin";
  c.data.classes = hundred ? 100 : 10;
  c.noise.kind = NoiseKind::kSidecar;
  c.noise.rate = 0.0;
  c.noise.sidecar = hundred ? "data/cifar100n_noisy.txt" : "data/cifar10n_worst.txt";
  c.model.backbone = Backbone::kPreActResNet34;
  c.model.num_classes = c.data.classes;
  c.model.num_shallow_heads = 3;
  c.model.feature_dim = 512;
  c.model.ema_decay = 0.999;
  c.train.epochs = hundred ? 340 : 320;
  c.train.warmup_epochs = hundred ? 40 : 20;
  c.train.batch_size = 256;
  c.train.lr_init = 0.04;
  c.train.momentum = 0.9;
  c.train.weight_decay = 5e-4;
  c.train.t_max = 300;
  c.train.eta_min = 2e-4;
  c.train.checkpoint_every = 5;
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  field_check(epochs >= 1, "train.epochs", "must be at least 1, got " + std::to_string(epochs));
  field_check(warmup_epochs >= 0 && warmup_epochs <= epochs, "train.warmup_epochs",
              "must be in [0, train.epochs] (got " + std::to_string(warmup_epochs) + " with train.epochs = " +
                  std::to_string(epochs) + ")");
  field_check(batch_size >= 1, "train.batch_size", "must be positive");
  field_check(lr_init > 0.0, "train.lr_init", "must be positive");
  field_check(eta_min > 0.0 && eta_min <= lr_init, "train.eta_min", "must be in (0, train.lr_init]");
  field_check(t_max >= 1, "train.t_max", "must be positive");
  field_check(momentum >= 0.0 && momentum < 1.0, "train.momentum", "must be in [0, 1)");
  field_check(weight_decay >= 0.0, "train.weight_decay", "must be non-negative");
  field_check(loss.alpha >= 0.0, "loss.alpha", "must be non-negative");
  field_check(loss.lambda >= 0.0, "loss.lambda", "must be non-negative");
  field_check(loss.gamma >= 0.0, "loss.gamma", "must be non-negative");
  field_check(loss.delta >= 0.0, "loss.delta", "must be non-negative");
  field_check(beta_scale >= 0.0, "loss.beta_scale", "must be non-negative");
  field_check(threshold > 0.0 && threshold < 1.0, "detect.threshold", "must be in (0, 1)");
  field_check(jitter >= 0.0, "augment.jitter", "must be non-negative");
  field_check(sop_lr_scale >= 0.0, "sop.lr_scale", "must be non-negative");
  field_check(sop_init_std >= 0.0, "sop.init_std", "must be non-negative");
  field_check(checkpoint_every >= 0, "train.checkpoint_every", "must be non-negative");
}

void RunConfig::validate() const {
  field_check(!name.empty() && name.find('/') == std::string::npos, "run.name", "must be a non-empty file name");
  if (data.source == DataSource::kBlobs) {
    field_check(data.classes >= 2, "data.classes", "must be at least 2");
    field_check(data.dim >= data.classes, "data.dim", "must be at least data.classes");
    field_check(data.n >= static_cast<std::size_t>(data.classes), "data.n", "must be at least data.classes");
    field_check(data.separation > 0.0, "data.separation", "must be positive");
  } else {
    field_check(data.classes == (data.source == DataSource::kCifar10 ? 10 : 100), "data.classes",
                "must match the CIFAR variant");
    field_check(!data.path.empty(), "data.path", "must name the CIFAR binary directory");
  }
  field_check(model.num_classes == data.classes, "model.num_classes", "must equal data.classes");
  field_check(noise.rate >= 0.0 && noise.rate <= 1.0, "noise.rate", "must be in [0, 1]");
  field_check(noise.kind != NoiseKind::kSidecar || !noise.sidecar.empty(), "noise.sidecar",
              "required when noise.kind = sidecar");
  try {
    model.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
  if (train.heads == HeadMode::kNegativeOnly) {
    field_check(model.num_shallow_heads == 0, "model.shallow_heads", "must be 0 when train.heads = negative_only");
  }
  train.validate();
}

FlatConfig to_flat(const RunConfig& c) {
  FlatConfig f;
  f["run.name"] = c.name;
  f["seed"] = fmt_int(c.train.seed);
  f["data.source"] = std::string(source_name(c.data.source));
  f["data.n"] = fmt_int(c.data.n);
  f["data.classes"] = fmt_int(c.data.classes);
  f["data.dim"] = fmt_int(c.data.dim);
  f["data.separation"] = fmt(c.data.separation);
  f["data.test_n"] = fmt_int(c.data.test_n);
  f["data.path"] = c.data.path.string();
  f["data.subset"] = fmt_int(c.data.subset);
  f["data.test_subset"] = fmt_int(c.data.test_subset);
  f["noise.kind"] = std::string(to_string(c.noise.kind));
  f["noise.rate"] = fmt(c.noise.rate);
  f["noise.sidecar"] = c.noise.sidecar.string();
  f["model.backbone"] = std::string(to_string(c.model.backbone));
  f["model.num_classes"] = fmt_int(c.model.num_classes);
  f["model.shallow_heads"] = fmt_int(c.model.num_shallow_heads);
  f["model.feature_dim"] = fmt_int(c.model.feature_dim);
  f["model.ema_decay"] = fmt(c.model.ema_decay);
  f["train.epochs"] = fmt_int(c.train.epochs);
  f["train.warmup_epochs"] = fmt_int(c.train.warmup_epochs);
  f["train.batch_size"] = fmt_int(c.train.batch_size);
  f["train.lr_init"] = fmt(c.train.lr_init);
  f["train.momentum"] = fmt(c.train.momentum);
  f["train.weight_decay"] = fmt(c.train.weight_decay);
  f["train.t_max"] = fmt_int(c.train.t_max);
  f["train.eta_min"] = fmt(c.train.eta_min);
  f["train.heads"] = std::string(to_string(c.train.heads));
  f["train.checkpoint_every"] = fmt_int(c.train.checkpoint_every);
  f["loss.alpha"] = fmt(c.train.loss.alpha);
  f["loss.lambda"] = fmt(c.train.loss.lambda);
  f["loss.gamma"] = fmt(c.train.loss.gamma);
  f["loss.delta"] = fmt(c.train.loss.delta);
  f["loss.beta_scale"] = fmt(c.train.beta_scale);
  f["sop.lr_scale"] = fmt(c.train.sop_lr_scale);
  f["sop.init_std"] = fmt(c.train.sop_init_std);
  f["augment.jitter"] = fmt(c.train.jitter);
  f["detect.threshold"] = fmt(c.train.threshold);
  f["output.dump_weights"] = c.train.dump_weights ? "true" : "false";
  f["output.wall_clock"] = c.train.record_wall_clock ? "true" : "false";
  return f;
}

RunConfig from_flat(const FlatConfig& flat) {
  static const FlatConfig known = to_flat(RunConfig{});
  for (const auto& [key, value] : flat) {
    if (!known.contains(key)) throw ValidationError("unknown config key '" + key + "'");
  }
  FlatConfig merged = known;
  for (const auto& [key, value] : flat) merged[key] = value;

  const Reader r(merged);
  RunConfig c;
  c.name = r.raw("run.name");
  c.train.seed = r.integer<std::uint64_t>("seed");
  c.data.source = r.parsed("data.source", parse_source);
  c.data.n = r.integer<std::size_t>("data.n");
  c.data.classes = r.integer<int>("data.classes");
  c.data.dim = r.integer<int>("data.dim");
  c.data.separation = r.real("data.separation");
  c.data.test_n = r.integer<std::size_t>("data.test_n");
  c.data.path = r.raw("data.path");
  c.data.subset = r.integer<std::size_t>("data.subset");
  c.data.test_subset = r.integer<std::size_t>("data.test_subset");
  c.noise.kind = r.parsed("noise.kind", parse_noise_kind);
  c.noise.rate = r.real("noise.rate");
  c.noise.sidecar = r.raw("noise.sidecar");
  c.model.backbone = r.parsed("model.backbone", parse_backbone);
  c.model.num_classes = r.integer<int>("model.num_classes");
  c.model.num_shallow_heads = r.integer<int>("model.shallow_heads");
  c.model.feature_dim = r.integer<int>("model.feature_dim");
  c.model.ema_decay = r.real("model.ema_decay");
  c.train.epochs = r.integer<int>("train.epochs");
  c.train.warmup_epochs = r.integer<int>("train.warmup_epochs");
  c.train.batch_size = r.integer<int>("train.batch_size");
  c.train.lr_init = r.real("train.lr_init");
  c.train.momentum = r.real("train.momentum");
  c.train.weight_decay = r.real("train.weight_decay");
  c.train.t_max = r.integer<int>("train.t_max");
  c.train.eta_min = r.real("train.eta_min");
  c.train.heads = r.parsed("train.heads", parse_head_mode);
  c.train.checkpoint_every = r.integer<int>("train.checkpoint_every");
  c.train.loss.alpha = r.real("loss.alpha");
  c.train.loss.lambda = r.real("loss.lambda");
  c.train.loss.gamma = r.real("loss.gamma");
  c.train.loss.delta = r.real("loss.delta");
  c.train.beta_scale = r.real("loss.beta_scale");
  c.train.sop_lr_scale = r.real("sop.lr_scale");
  c.train.sop_init_std = r.real("sop.init_std");
  c.train.jitter = r.real("augment.jitter");
  c.train.threshold = r.real("detect.threshold");
  c.train.dump_weights = r.boolean("output.dump_weights");
  c.train.record_wall_clock = r.boolean("output.wall_clock");
  c.validate();
  return c;
}

std::vector<std::string> preset_names() {
  return {"desk_blobs", "desk_cifar_subset", "paper_full", "paper_full_cifar100"};
}

FlatConfig preset(const std::string& name) {
  if (name == "desk_blobs") return to_flat(desk_blobs());
  if (name == "desk_cifar_subset") return to_flat(desk_cifar_subset());
  if (name == "paper_full") return to_flat(paper_full(false));
  if (name == "paper_full_cifar100") return to_flat(paper_full(true));
  throw ValidationError("unknown preset '" + name + "'");
}

FlatConfig parse_flat_config(std::string_view text, const std::string& origin) {
  FlatConfig out;
  std::optional<FlatConfig> base;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + " line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ValidationError(origin + " line " + std::to_string(line_no) + ": empty key");
    if (key == "base") {
      base = preset(value);
      continue;
    }
    out[key] = value;
  }
  if (base) {
    for (const auto& [k, v] : out) (*base)[k] = v;
    return *base;
  }
  return out;
}

std::string format_flat_config(const FlatConfig& flat) {
  std::string out;
  for (const auto& [k, v] : flat) out += k + " = " + v + "\n";
  return out;
}

FlatConfig load_flat_config(const std::string& preset_or_path) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), preset_or_path) != names.end()) return preset(preset_or_path);
  std::ifstream in(preset_or_path);
  if (!in) {
    throw ValidationError("config '" + preset_or_path + "' is neither a preset (" + names[0] + ", " + names[1] +
                          ", " + names[2] + ", " + names[3] + ") nor a readable file");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_flat_config(buf.str(), preset_or_path);
}

void apply_override(FlatConfig& flat, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ValidationError("override '" + std::string(assignment) + "' is not key=value");
  std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  static const FlatConfig known = to_flat(RunConfig{});
  if (!known.contains(key)) {
    std::vector<std::string> matches;
    for (const auto& [k, v] : known) {
      const auto dot = k.rfind('.');
      if (dot != std::string::npos && k.substr(dot + 1) == key) matches.push_back(k);
    }
    if (matches.size() != 1) {
      throw ValidationError("override key '" + key + "' " +
                            (matches.empty() ? "is unknown" : "is ambiguous; use the full dotted name"));
    }
    key = matches.front();
  }
  flat[key] = value;
}

}  // namespace bilearn

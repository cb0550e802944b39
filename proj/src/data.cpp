#include "bilearn/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>

namespace bilearn {

Example Dataset::example(std::size_t i) const {
  require(i < size(), "dataset index " + std::to_string(i) + " out of range");
  Example e;
  e.index = static_cast<std::int64_t>(i);
  e.features = features.row(static_cast<Eigen::Index>(i)).transpose();
  e.noisy_label = noisy_labels[i];
  if (clean_labels) e.clean_label = (*clean_labels)[i];
  return e;
}

std::size_t Dataset::noisy_count() const {
  require(has_clean_labels(), "noisy_count needs clean labels");
  std::size_t count = 0;
  for (std::size_t i = 0; i < size(); ++i) count += noisy_labels[i] != (*clean_labels)[i];
  return count;
}

void Dataset::validate() const {
  require(features.rows() == static_cast<Eigen::Index>(size()), "dataset: feature rows differ from label count");
  require(features.cols() == shape.flat(), "dataset: feature width differs from shape");
  for (std::size_t i = 0; i < size(); ++i) label_space.check(noisy_labels[i], "noisy label of sample " + std::to_string(i));
  if (clean_labels) {
    require(clean_labels->size() == size(), "dataset: clean label count differs");
    for (std::size_t i = 0; i < size(); ++i) label_space.check((*clean_labels)[i], "clean label of sample " + std::to_string(i));
  }
}

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "none") return NoiseKind::kNone;
  if (name == "symmetric") return NoiseKind::kSymmetric;
  if (name == "pairflip") return NoiseKind::kPairflip;
  if (name == "sidecar") return NoiseKind::kSidecar;
  throw ValidationError("unknown noise kind '" + std::string(name) + "' (expected none, symmetric, pairflip, sidecar)");
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kSymmetric: return "symmetric";
    case NoiseKind::kPairflip: return "pairflip";
    case NoiseKind::kSidecar: return "sidecar";
  }
  return "none";
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch, std::uint64_t key) {
  const auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  const auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(epoch), hi(epoch), lo(key), hi(key)};
  return std::mt19937_64(seq);
}

Dataset make_gaussian_blobs(std::size_t n, int num_classes, int dim, double separation, std::uint64_t seed) {
  require(num_classes >= 2, "blobs: need at least 2 classes");
  require(n >= static_cast<std::size_t>(num_classes), "blobs: need n >= number of classes");
  require(dim >= num_classes, "blobs: dim must be at least the class count for axis-aligned means");
  require(separation > 0.0, "blobs: separation must be positive");

  Dataset d;
  d.label_space = LabelSpace(num_classes);
  d.shape = {dim};
  d.features.resize(static_cast<Eigen::Index>(n), dim);
  d.noisy_labels.resize(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<Label>(i % static_cast<std::size_t>(num_classes));
    d.noisy_labels[i] = label;
    for (int k = 0; k < dim; ++k) {
      const double mean = k == label ? separation : 0.0;
      d.features(static_cast<Eigen::Index>(i), k) = static_cast<float>(mean + gauss(rng));
    }
  }
  d.clean_labels = d.noisy_labels;
  return d;
}

FeatureScaler FeatureScaler::fit(const Dataset& d) {
  require(d.size() >= 2, "feature scaler needs at least two samples");
  const Eigen::MatrixXd x = d.features.cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows());
  FeatureScaler s;
  s.mean = mean.transpose().cast<float>();
  s.inv_std = var.transpose().unaryExpr([](double v) { return v > 1e-12 ? 1.0 / std::sqrt(v) : 1.0; }).cast<float>();
  return s;
}

Dataset FeatureScaler::apply(Dataset d) const {
  require(d.features.cols() == mean.size(), "feature scaler: dimension mismatch");
  d.features = ((d.features.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array()).matrix();
  return d;
}

Dataset inject_symmetric_noise(Dataset d, double rate, std::uint64_t seed) {
  require(rate >= 0.0 && rate <= 1.0, "symmetric noise rate must be in [0, 1]");
  require(d.has_clean_labels(), "noise injection needs clean labels");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(rate);
  std::uniform_int_distribution<int> other(0, d.num_classes() - 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Label clean = (*d.clean_labels)[i];
    Label noisy = clean;
    if (flip(rng)) {
      noisy = other(rng);
      if (noisy >= clean) ++noisy;
    }
    d.noisy_labels[i] = noisy;
  }
  return d;
}

Dataset inject_pairflip_noise(Dataset d, double rate, std::uint64_t seed) {
  require(rate >= 0.0 && rate <= 1.0, "pairflip noise rate must be in [0, 1]");
  require(d.has_clean_labels(), "noise injection needs clean labels");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(rate);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Label clean = (*d.clean_labels)[i];
    d.noisy_labels[i] = flip(rng) ? (clean + 1) % d.num_classes() : clean;
  }
  return d;
}

std::vector<Label> read_sidecar(const std::filesystem::path& path, int num_classes,
                                std::optional<std::size_t> expected_count) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open sidecar " + path.string());
  std::vector<Label> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Label value = 0;
    const auto* first = line.data();
    const auto* last = line.data() + line.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (line.empty() || ec != std::errc() || ptr != last) {
      throw ValidationError("sidecar " + path.string() + " line " + std::to_string(line_no) + ": '" + line +
                            "' is not an integer");
    }
    if (value < 0 || value >= num_classes) {
      throw ValidationError("sidecar " + path.string() + " line " + std::to_string(line_no) + ": label " +
                            std::to_string(value) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    labels.push_back(value);
  }
  if (expected_count && labels.size() != *expected_count) {
    throw ValidationError("sidecar " + path.string() + " has " + std::to_string(labels.size()) +
                          " lines but the dataset has " + std::to_string(*expected_count) + " samples");
  }
  return labels;
}

void write_sidecar(const std::filesystem::path& path, std::span<const Label> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write sidecar " + path.string());
  for (Label l : labels) out << l << '\n';
  if (!out) throw RuntimeError("failed writing sidecar " + path.string());
}

Dataset load_noisy_sidecar(Dataset d, const std::filesystem::path& path) {
  d.noisy_labels = read_sidecar(path, d.num_classes(), d.size());
  return d;
}

Dataset apply_noise(Dataset d, const NoiseSpec& spec) {
  switch (spec.kind) {
    case NoiseKind::kNone: return d;
    case NoiseKind::kSymmetric: return inject_symmetric_noise(std::move(d), spec.rate, spec.seed);
    case NoiseKind::kPairflip: return inject_pairflip_noise(std::move(d), spec.rate, spec.seed);
    case NoiseKind::kSidecar: return load_noisy_sidecar(std::move(d), spec.sidecar_path);
  }
  return d;
}

void write_dataset_manifest(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write dataset manifest " + path.string());
  out << "index,clean_label,noisy_label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << i << ',';
    if (d.clean_labels) out << (*d.clean_labels)[i];
    out << ',' << d.noisy_labels[i] << '\n';
  }
}

Dataset load_cifar_binary(std::span<const std::filesystem::path> files, CifarVariant variant, std::size_t limit) {
  constexpr int kSide = 32;
  constexpr int kPixels = 3 * kSide * kSide;
  const int label_bytes = variant == CifarVariant::kCifar10 ? 1 : 2;
  const int classes = variant == CifarVariant::kCifar10 ? 10 : 100;
  const std::array<float, 3> mean = variant == CifarVariant::kCifar10 ? std::array<float, 3>{0.4914f, 0.4822f, 0.4465f}
                                                                       : std::array<float, 3>{0.5071f, 0.4865f, 0.4409f};
  const std::array<float, 3> stdev = variant == CifarVariant::kCifar10 ? std::array<float, 3>{0.2470f, 0.2435f, 0.2616f}
                                                                        : std::array<float, 3>{0.2673f, 0.2564f, 0.2762f};
  const std::size_t record = static_cast<std::size_t>(label_bytes + kPixels);

  std::vector<Label> labels;
  std::vector<std::vector<unsigned char>> pixels;
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw RuntimeError("cannot open CIFAR batch " + file.string());
    std::vector<unsigned char> buf(record);
    while (limit == 0 || labels.size() < limit) {
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
      if (in.gcount() == 0) break;
      if (static_cast<std::size_t>(in.gcount()) != record) {
        throw RuntimeError("truncated record in CIFAR batch " + file.string());
      }
      const int label = buf[static_cast<std::size_t>(label_bytes - 1)];
      if (label >= classes) throw RuntimeError("label " + std::to_string(label) + " out of range in " + file.string());
      labels.push_back(label);
      pixels.emplace_back(buf.begin() + label_bytes, buf.end());
    }
  }
  require(!labels.empty(), "no CIFAR records read");

  Dataset d;
  d.label_space = LabelSpace(classes);
  d.shape = {3, kSide, kSide};
  d.features.resize(static_cast<Eigen::Index>(labels.size()), kPixels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (int p = 0; p < kPixels; ++p) {
      const int c = p / (kSide * kSide);
      const float v = static_cast<float>(pixels[i][static_cast<std::size_t>(p)]) / 255.0f;
      d.features(static_cast<Eigen::Index>(i), p) = (v - mean[static_cast<std::size_t>(c)]) / stdev[static_cast<std::size_t>(c)];
    }
  }
  d.noisy_labels = labels;
  d.clean_labels = std::move(labels);
  return d;
}

Dataset take_prefix(Dataset d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  d.features.conservativeResize(static_cast<Eigen::Index>(n), Eigen::NoChange);
  d.noisy_labels.resize(n);
  if (d.clean_labels) d.clean_labels->resize(n);
  return d;
}

AugmentSpec make_augment_spec(const Dataset& d, double jitter_scale) {
  require(jitter_scale >= 0.0, "augment.jitter must be non-negative");
  AugmentSpec spec;
  if (d.shape.spatial()) {
    spec.kind = AugmentSpec::Kind::kCropFlip;
    return spec;
  }
  spec.kind = AugmentSpec::Kind::kJitter;
  const Eigen::RowVectorXd mean = d.features.cast<double>().colwise().mean();
  const Eigen::RowVectorXd var =
      (d.features.cast<double>().rowwise() - mean).cwiseAbs2().colwise().sum() / static_cast<double>(std::max<std::size_t>(d.size(), 1));
  spec.jitter_sigma = (var.cwiseSqrt() * jitter_scale).transpose().cast<float>();
  return spec;
}

namespace {

constexpr std::uint64_t kAugmentStream = 0xa06;

Vector<float> augment_once(const Vector<float>& x, const AugmentSpec& spec, nn::FeatureShape shape,
                           std::mt19937_64& rng) {
  if (spec.kind == AugmentSpec::Kind::kJitter) {
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    Vector<float> out = x;
    for (Eigen::Index k = 0; k < out.size(); ++k) {
      const float sigma = spec.jitter_sigma.size() == out.size() ? spec.jitter_sigma[k] : 0.0f;
      const float noise = gauss(rng);
      out[k] += sigma * noise;
    }
    return out;
  }
  const int pad = spec.crop_padding;
  std::uniform_int_distribution<int> offset(-pad, pad);
  std::bernoulli_distribution flip(0.5);
  const int dy = offset(rng);
  const int dx = offset(rng);
  const bool mirror = flip(rng);
  Vector<float> out = Vector<float>::Zero(x.size());
  for (int c = 0; c < shape.channels; ++c) {
    for (int h = 0; h < shape.height; ++h) {
      const int sh = h + dy;
      if (sh < 0 || sh >= shape.height) continue;
      for (int w = 0; w < shape.width; ++w) {
        int sw = w + dx;
        if (sw < 0 || sw >= shape.width) continue;
        const int tw = mirror ? shape.width - 1 - w : w;
        out[(c * shape.height + h) * shape.width + tw] = x[(c * shape.height + sh) * shape.width + sw];
      }
    }
  }
  return out;
}

}  // namespace

std::pair<Vector<float>, Vector<float>> two_view_augment(const Example& example, const AugmentSpec& spec,
                                                         nn::FeatureShape shape, std::int64_t epoch,
                                                         std::uint64_t seed) {
  require(example.features.size() == shape.flat(), "two_view_augment: feature size does not match shape");
  auto rng = stream_rng(seed, kAugmentStream, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(example.index));
  Vector<float> first = augment_once(example.features, spec, shape, rng);
  Vector<float> second = augment_once(example.features, spec, shape, rng);
  return {std::move(first), std::move(second)};
}

}  // namespace bilearn

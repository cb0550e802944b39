#include "bilearn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace bilearn {

namespace {

constexpr char kMagic[8] = {'B', 'I', 'L', 'E', 'A', 'R', 'N', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

const char* dtype_name(Checkpoint::DType d) {
  switch (d) {
    case Checkpoint::DType::kF32: return "f32";
    case Checkpoint::DType::kF64: return "f64";
    case Checkpoint::DType::kI32: return "i32";
  }
  return "f32";
}

Checkpoint::DType parse_dtype(const std::string& s) {
  if (s == "f32") return Checkpoint::DType::kF32;
  if (s == "f64") return Checkpoint::DType::kF64;
  if (s == "i32") return Checkpoint::DType::kI32;
  throw RuntimeError("checkpoint: unknown dtype '" + s + "'");
}

template <typename T>
std::vector<char> to_bytes(const T* data, std::size_t count) {
  std::vector<char> out(count * sizeof(T));
  if (count > 0) std::memcpy(out.data(), data, out.size());
  return out;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Matrix<float>& m) {
  tensors_[name] = {DType::kF32, m.rows(), m.cols(), to_bytes(m.data(), static_cast<std::size_t>(m.size()))};
}

void Checkpoint::put(const std::string& name, const Matrix<double>& m) {
  tensors_[name] = {DType::kF64, m.rows(), m.cols(), to_bytes(m.data(), static_cast<std::size_t>(m.size()))};
}

void Checkpoint::put(const std::string& name, const std::vector<std::int32_t>& v) {
  tensors_[name] = {DType::kI32, static_cast<Eigen::Index>(v.size()), 1, to_bytes(v.data(), v.size())};
}

const Checkpoint::Tensor& Checkpoint::find(const std::string& name, DType dtype) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw RuntimeError("checkpoint has no tensor '" + name + "'");
  if (it->second.dtype != dtype) {
    throw RuntimeError("checkpoint tensor '" + name + "' is " + dtype_name(it->second.dtype) + ", expected " +
                       dtype_name(dtype));
  }
  return it->second;
}

Matrix<float> Checkpoint::f32(const std::string& name) const {
  const Tensor& t = find(name, DType::kF32);
  Matrix<float> m(t.rows, t.cols);
  if (!t.bytes.empty()) std::memcpy(m.data(), t.bytes.data(), t.bytes.size());
  return m;
}

Matrix<double> Checkpoint::f64(const std::string& name) const {
  const Tensor& t = find(name, DType::kF64);
  Matrix<double> m(t.rows, t.cols);
  if (!t.bytes.empty()) std::memcpy(m.data(), t.bytes.data(), t.bytes.size());
  return m;
}

std::vector<std::int32_t> Checkpoint::i32(const std::string& name) const {
  const Tensor& t = find(name, DType::kI32);
  std::vector<std::int32_t> v(static_cast<std::size_t>(t.rows));
  if (!t.bytes.empty()) std::memcpy(v.data(), t.bytes.data(), t.bytes.size());
  return v;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "bilearn-checkpoint";
  header["version"] = 1;
  header["meta"] = meta;
  nlohmann::json list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    list.push_back({{"name", name},
                    {"dtype", dtype_name(t.dtype)},
                    {"rows", t.rows},
                    {"cols", t.cols},
                    {"offset", offset},
                    {"bytes", t.bytes.size()}});
    offset += t.bytes.size();
  }
  header["tensors"] = list;
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors_) out.write(t.bytes.data(), static_cast<std::streamsize>(t.bytes.size()));
    if (!out) throw RuntimeError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw RuntimeError(path.string() + " is not a bilearn checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw RuntimeError("truncated checkpoint header in " + path.string());

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      Tensor t;
      t.dtype = parse_dtype(entry.at("dtype").get<std::string>());
      t.rows = entry.at("rows").get<Eigen::Index>();
      t.cols = entry.at("cols").get<Eigen::Index>();
      t.bytes.resize(entry.at("bytes").get<std::size_t>());
      in.read(t.bytes.data(), static_cast<std::streamsize>(t.bytes.size()));
      if (!in) throw RuntimeError("truncated tensor payload");
      ckpt.tensors_[entry.at("name").get<std::string>()] = std::move(t);
    }
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError("malformed checkpoint header in " + path.string() + ": " + e.what());
  } catch (const RuntimeError& e) {
    throw RuntimeError(path.string() + ": " + e.what());
  }
  return ckpt;
}

bool Checkpoint::operator==(const Checkpoint& other) const {
  return meta == other.meta && tensors_ == other.tensors_;
}

}  // namespace bilearn

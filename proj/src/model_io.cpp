#include "metamg/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "metamg/grid.hpp"

namespace metamg {

ParamTensor& ModelParams::add(const std::string& name, std::vector<std::size_t> shape) {
  if (contains(name)) throw ContractError("ModelParams: duplicate parameter '" + name + "'");
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  tensors_.push_back({name, std::move(shape), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  return tensors_.back();
}

ParamTensor& ModelParams::get(const std::string& name) {
  for (auto& t : tensors_)
    if (t.name == name) return t;
  throw ContractError("ModelParams: no parameter named '" + name + "'");
}

const ParamTensor& ModelParams::get(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw ContractError("ModelParams: no parameter named '" + name + "'");
}

bool ModelParams::contains(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const ParamTensor& t) { return t.name == name; });
}

std::size_t ModelParams::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (metadata != other.metadata || tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size()) return false;
    // bitwise comparison so that round trips are checked exactly
    if (std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

void put_string(std::string& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic() {
    need(sizeof(kCheckpointMagic));
    if (std::memcmp(bytes_.data() + pos_, kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
      throw std::runtime_error("checkpoint: bad magic string");
    pos_ += sizeof(kCheckpointMagic);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const ModelParams& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.metadata.size()));
  for (const auto& [k, v] : params.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    put_string(out, t.name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_le<std::uint64_t>(out, d);
    for (double v : t.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ModelParams deserialize(const std::string& bytes) {
  Reader in(bytes);
  in.expect_magic();
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  ModelParams params;
  const auto nmeta = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = in.get_string();
    params.metadata[k] = in.get_string();
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.get_string();
    const auto rank = in.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    ParamTensor& t = params.add(name, shape);
    for (double& v : t.values) v = std::bit_cast<double>(in.get<std::uint64_t>());
  }
  if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  const std::string bytes = serialize(params);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

}  // namespace metamg

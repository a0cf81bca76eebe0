#pragma once

// Named trainable arrays with gradient slots, and the portable checkpoint
// format used by every learned model.
//
// Checkpoint layout (all integers little-endian):
//   8 bytes  magic "METAMGCK"
//   u32      format version (1)
//   u32      metadata entry count, then per entry: string key, string value
//   u32      parameter count, then per parameter:
//              string name, u32 rank, u64 dims[rank], f64 values[prod(dims)]
// where a string is a u32 byte length followed by the bytes.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace metamg {

struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;

  std::size_t size() const { return values.size(); }
};

class ModelParams {
 public:
  /// Appends a zero-initialized tensor; names must be unique.
  ParamTensor& add(const std::string& name, std::vector<std::size_t> shape);

  ParamTensor& get(const std::string& name);
  const ParamTensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }

  std::size_t total_size() const;
  void zero_grad();
  bool all_finite() const;

  std::map<std::string, std::string> metadata;

  bool operator==(const ModelParams& other) const;

 private:
  std::vector<ParamTensor> tensors_;
};

inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'T', 'A', 'M', 'G', 'C', 'K'};
inline constexpr unsigned kCheckpointVersion = 1;

std::string serialize(const ModelParams& params);
/// Throws std::runtime_error on a malformed or truncated buffer.
ModelParams deserialize(const std::string& bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace metamg

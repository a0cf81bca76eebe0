#pragma once

// Line-oriented configuration files:
//
//   # comment              (also "; comment"; a '#' after whitespace ends a line)
//   [section]              (keys before the first section belong to "")
//   key = value            (key: letters, digits, '_', '-', '.'; value trimmed)
//
// Duplicate keys within a section are an error. Lists are comma separated.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metamg/grid.hpp"
#include "metamg/training.hpp"

namespace metamg {

class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  static ConfigFile parse(std::string_view text, const std::string& source = "<config>");
  static ConfigFile load(const std::filesystem::path& path);

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
};

double parse_double(const std::string& s);
std::size_t parse_size(const std::string& s);
std::vector<double> parse_double_list(const std::string& s);
std::vector<std::size_t> parse_size_list(const std::string& s);
/// "lo,hi" or a single value v (meaning [v, v]).
std::pair<double, double> parse_range(const std::string& s);

/// Applies sections [train] and [eta] onto `config`. Unknown sections or
/// keys raise ConfigError.
void apply_train_config(const ConfigFile& file, TrainConfig& config);

}  // namespace metamg

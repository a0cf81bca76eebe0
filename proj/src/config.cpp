#include "metamg/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace metamg {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      return false;
  return true;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text, const std::string& source) {
  ConfigFile cf;
  std::string section;
  cf.sections[section];
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++lineno;
    auto where = [&] { return source + ":" + std::to_string(lineno) + ": "; };

    for (std::size_t i = 0; i < line.size(); ++i)
      if (line[i] == '#' && (i == 0 || std::isspace(static_cast<unsigned char>(line[i - 1])))) {
        line.resize(i);
        break;
      }
    line = trim(line);
    if (line.empty() || line[0] == ';') continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where() + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!valid_key(section)) throw ConfigError(where() + "invalid section name '" + section + "'");
      cf.sections[section];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(where() + "invalid key '" + key + "'");
    auto& sec = cf.sections[section];
    if (sec.count(key)) throw ConfigError(where() + "duplicate key '" + key + "'");
    sec[key] = value;
    if (eol == text.size()) break;
  }
  return cf;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

std::optional<std::string> ConfigFile::get(const std::string& section, const std::string& key) const {
  auto s = sections.find(section);
  if (s == sections.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

double parse_double(const std::string& s) {
  const std::string t = trim(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  if (used != t.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s) {
  const std::string t = trim(s);
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ConfigError("not a non-negative integer: '" + s + "'");
  return v;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split(s)) out.push_back(parse_double(item));
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split(s)) out.push_back(parse_size(item));
  return out;
}

std::pair<double, double> parse_range(const std::string& s) {
  const auto v = parse_double_list(s);
  if (v.size() == 1) return {v[0], v[0]};
  if (v.size() == 2) return {v[0], v[1]};
  throw ConfigError("expected 'lo,hi' or a single value: '" + s + "'");
}

void apply_train_config(const ConfigFile& file, TrainConfig& c) {
  for (const auto& [name, keys] : file.sections) {
    if (name.empty() || name == "train") {
      for (const auto& [k, v] : keys) {
        if (k == "model") c.model = parse_model_kind(v);
        else if (k == "cells" || k == "n") c.cells = parse_size(v);
        else if (k == "levels") c.levels = parse_size(v);
        else if (k == "nu") c.nu = parse_size_list(v);
        else if (k == "lr") c.lr = parse_double(v);
        else if (k == "batch") c.batch = parse_size(v);
        else if (k == "epochs") c.epochs = parse_size(v);
        else if (k == "tasks") c.tasks = parse_size(v);
        else if (k == "rhs_per_task") c.rhs_per_task = parse_size(v);
        else if (k == "seed") c.seed = parse_size(v);
        else if (k == "threads") c.threads = parse_size(v);
        else if (k == "taps") c.taps = parse_size(v);
        else if (k == "hidden") c.hidden = parse_size(v);
        else throw ConfigError("unknown key '" + k + "' in section [train]");
      }
    } else if (name == "eta") {
      for (const auto& [k, v] : keys) {
        if (k == "family") c.eta.family = parse_pde_family(v);
        else if (k == "log_base") c.eta.log_base = parse_double(v);
        else if (k == "inv_eps") std::tie(c.eta.inv_eps_lo, c.eta.inv_eps_hi) = parse_range(v);
        else if (k == "inv_eps2") std::tie(c.eta.inv_eps2_lo, c.eta.inv_eps2_hi) = parse_range(v);
        else if (k == "theta") std::tie(c.eta.theta_lo, c.eta.theta_hi) = parse_range(v);
        else throw ConfigError("unknown key '" + k + "' in section [eta]");
      }
    } else {
      throw ConfigError("unknown section [" + name + "]");
    }
  }
}

}  // namespace metamg

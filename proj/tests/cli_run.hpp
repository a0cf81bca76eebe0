#pragma once

// Runs the metamg executable through the shell and captures stdout.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace cli {

struct Run {
  int code = -1;
  std::string out;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline Run run(const std::string& args) {
  static int counter = 0;
  const auto tmp = std::filesystem::temp_directory_path() /
                   ("metamg_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".out");
  const std::string cmd = std::string("\"") + METAMG_CLI_PATH + "\" " + args + " > \"" + tmp.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(tmp);
  std::filesystem::remove(tmp);
  return r;
}

}  // namespace cli

#ifndef GPDPM_CONFIG_HPP
#define GPDPM_CONFIG_HPP

#include <fstream>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "gpdpm/csv.hpp"

namespace gpdpm {

/// Flat `key = value` settings. Blank lines and lines starting with '#' are
/// ignored; a key may appear more than once (later entries come later).
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

inline ConfigEntries parse_config(std::istream& in, const std::string& source = "<config>") {
  ConfigEntries out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = csv::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw InputError(source + ":" + std::to_string(line_no) + ": expected key=value");
    const auto key = csv::trim(t.substr(0, eq));
    if (key.empty()) throw InputError(source + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(csv::trim(t.substr(eq + 1))));
  }
  return out;
}

inline ConfigEntries load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

}  // namespace gpdpm

#endif

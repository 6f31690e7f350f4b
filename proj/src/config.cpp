#include "liquidbench/config.hpp"

#include <fstream>
#include <sstream>

namespace liquidbench {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

KvMap parse_config_text(std::string_view text) {
  KvMap kv;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (pos == text.size() && eol == std::string_view::npos) break;
    std::string_view raw = text.substr(
        pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;

    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": malformed section header '" + line + "'");
      }
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty section name");
      }
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key before '='");
    }
    kv[section.empty() ? key : section + "." + key] = value;
  }
  return kv;
}

KvMap load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string canonical_config(const KvMap& kv) {
  // std::map iterates sorted; group keys back into sections
  std::ostringstream out;
  std::string current;
  bool first = true;
  for (const auto& [key, value] : kv) {
    std::size_t dot = key.find('.');
    std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (section != current || first) {
      if (!first) out << '\n';
      out << '[' << section << "]\n";
      current = section;
      first = false;
    }
    out << name << " = " << value << '\n';
  }
  return out.str();
}

}  // namespace liquidbench

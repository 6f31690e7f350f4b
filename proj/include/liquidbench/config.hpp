#pragma once

#include <map>
#include <string>
#include <string_view>

#include "liquidbench/model.hpp"

namespace liquidbench {

// Line-oriented configuration text: [section] headers, key = value pairs,
// '#' comments. Keys are flattened to "section.key".
using KvMap = std::map<std::string, std::string>;

// Throws ConfigError naming the offending line and field.
KvMap parse_config_text(std::string_view text);
KvMap load_config_file(const std::string& path);

// Deterministic rendering (sections and keys sorted); hashing this string
// defines the config hash.
std::string canonical_config(const KvMap& kv);

}  // namespace liquidbench

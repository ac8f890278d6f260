#pragma once

#include <map>
#include <string>

namespace togan {

/// Flat dotted-key configuration, e.g. "train.batch" -> "16".
using ConfigMap = std::map<std::string, std::string>;

/// `key = value` lines; `#` starts a comment; blank lines ignored.
/// Throws ContractError naming the offending line.
ConfigMap parse_config(const std::string& text);
ConfigMap load_config_file(const std::string& path);
std::string format_config(const ConfigMap& m);

/// For every key already in `m`, an environment variable named
/// prefix + KEY (upper case, dots as underscores) replaces the value.
void apply_env_overrides(ConfigMap& m, const std::string& prefix = "TOGAN_");
std::string env_name(const std::string& key, const std::string& prefix = "TOGAN_");

/// Overlays `overrides` on `base`; unknown keys are rejected.
void merge_config(ConfigMap& base, const ConfigMap& overrides);

std::string format_double(double v);
double parse_double(const std::string& key, const std::string& v);
int64_t parse_int(const std::string& key, const std::string& v);
bool parse_bool(const std::string& key, const std::string& v);

/// "4:128,8:128" <-> {{4, 128}, {8, 128}}
std::map<int, int> parse_int_table(const std::string& key, const std::string& v);
std::string format_int_table(const std::map<int, int>& t);

}  // namespace togan

#include "togan/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "togan/tensor.hpp"

namespace togan {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

ConfigMap parse_config(const std::string& text) {
  ConfigMap m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ContractError("config line " + std::to_string(lineno) + ": empty key");
    m[key] = value;
  }
  return m;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ConfigMap& m) {
  std::string out;
  for (const auto& [k, v] : m) out += k + " = " + v + "\n";
  return out;
}

std::string env_name(const std::string& key, const std::string& prefix) {
  std::string out = prefix;
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void apply_env_overrides(ConfigMap& m, const std::string& prefix) {
  for (auto& [k, v] : m)
    if (const char* e = std::getenv(env_name(k, prefix).c_str())) v = e;
}

void merge_config(ConfigMap& base, const ConfigMap& overrides) {
  for (const auto& [k, v] : overrides) {
    auto it = base.find(k);
    if (it == base.end()) throw ContractError("unknown config key '" + k + "'");
    it->second = v;
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ContractError("config key '" + key + "': expected a number, got '" + v + "'");
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long long d = std::stoll(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ContractError("config key '" + key + "': expected an integer, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::map<int, int> parse_int_table(const std::string& key, const std::string& v) {
  std::map<int, int> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    auto colon = item.find(':');
    if (colon == std::string::npos) throw ContractError("config key '" + key + "': expected r:c entries, got '" + v + "'");
    out[static_cast<int>(parse_int(key, trim(item.substr(0, colon))))] =
        static_cast<int>(parse_int(key, trim(item.substr(colon + 1))));
  }
  return out;
}

std::string format_int_table(const std::map<int, int>& t) {
  std::string out;
  for (const auto& [r, c] : t) out += (out.empty() ? "" : ",") + std::to_string(r) + ":" + std::to_string(c);
  return out;
}

}  // namespace togan

#include "rails/config.hpp"

#include <fstream>
#include <sstream>

#include "rails/errors.hpp"

namespace rails {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto at = line.find('=');
    if (at == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, at));
    const std::string value = trim(line.substr(at + 1));
    if (key.empty()) {
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": empty key");
    }
    if (config.values_.count(key) != 0) {
      throw ValidationError("config: duplicate key '" + key + "'");
    }
    config.values_[key] = value;
  }
  return config;
}

bool KvConfig::has(const std::string& key) const {
  return values_.count(key) != 0;
}

std::string KvConfig::get_string(const std::string& key,
                                 const std::string& fallback) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string KvConfig::require_string(const std::string& key) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) {
    throw ValidationError("config: missing required key '" + key + "'");
  }
  return it->second;
}

long long KvConfig::get_int(const std::string& key, long long fallback) const {
  const std::string v = get_string(key, "");
  if (v.empty()) return fallback;
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' is not an integer: " + v);
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  const std::string v = get_string(key, "");
  if (v.empty()) return fallback;
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' is not a number: " + v);
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  const std::string v = get_string(key, "");
  if (v.empty()) return fallback;
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ValidationError("config: key '" + key + "' is not a boolean: " + v);
}

std::uint64_t KvConfig::get_u64(const std::string& key,
                                std::uint64_t fallback) const {
  const std::string v = get_string(key, "");
  if (v.empty()) return fallback;
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key +
                          "' is not an unsigned integer: " + v);
  }
}

std::vector<std::string> KvConfig::get_list(const std::string& key,
                                            const std::string& fallback) const {
  return split_list(get_string(key, fallback));
}

void KvConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::vector<std::string> KvConfig::keys_with_prefix(
    const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_) {
    if (key.rfind(prefix, 0) == 0) {
      out.push_back(key);
      consumed_.insert(key);
    }
  }
  return out;
}

std::vector<std::string> KvConfig::unconsumed() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_) {
    if (consumed_.count(key) == 0) out.push_back(key);
  }
  return out;
}

std::vector<std::string> KvConfig::echo() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_) {
    out.push_back(key + "=" + value);
  }
  return out;
}

}  // namespace rails

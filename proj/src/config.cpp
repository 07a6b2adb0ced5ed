#include "vu/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "vu/io.hpp"

namespace vu::config {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

KeyValues parse(std::string_view text, std::string_view source) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError("", where + ": expected key = value");
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("", where + ": empty key");
    if (kv.count(key)) throw ConfigError(key, where + ": duplicate key");
    kv.emplace(std::move(key), std::move(value));
  }
  return kv;
}

KeyValues load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("", "config file not found: " + path.string());
  return parse(io::read_text(path), path.string());
}

std::string serialize(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

const std::string* Section::find(std::string_view name) const {
  auto it = kv_->find(key(name));
  return it == kv_->end() ? nullptr : &it->second;
}

std::string Section::get_string(std::string_view name, std::optional<std::string> fallback) const {
  if (const auto* v = find(name)) return *v;
  if (fallback) return *fallback;
  throw ConfigError(key(name), "required key is missing");
}

double Section::get_double(std::string_view name, std::optional<double> fallback) const {
  const auto* v = find(name);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(key(name), "required key is missing");
  }
  try {
    std::size_t pos = 0;
    const double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key(name), "expected a number, got '" + *v + "'");
  }
}

long long Section::get_int(std::string_view name, std::optional<long long> fallback) const {
  const auto* v = find(name);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(key(name), "required key is missing");
  }
  long long out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || p != v->data() + v->size()) throw ConfigError(key(name), "expected an integer, got '" + *v + "'");
  return out;
}

std::uint64_t Section::get_u64(std::string_view name, std::optional<std::uint64_t> fallback) const {
  const auto* v = find(name);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(key(name), "required key is missing");
  }
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || p != v->data() + v->size())
    throw ConfigError(key(name), "expected an unsigned integer, got '" + *v + "'");
  return out;
}

bool Section::get_bool(std::string_view name, std::optional<bool> fallback) const {
  const auto* v = find(name);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(key(name), "required key is missing");
  }
  std::string s = *v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  throw ConfigError(key(name), "expected a boolean, got '" + *v + "'");
}

std::vector<int> Section::get_int_list(std::string_view name, std::optional<std::vector<int>> fallback) const {
  const auto* v = find(name);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(key(name), "required key is missing");
  }
  std::vector<int> out;
  std::string s = *v;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    int x = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (ec != std::errc{} || p != tok.data() + tok.size())
      throw ConfigError(key(name), "expected a comma-separated integer list, got '" + *v + "'");
    out.push_back(x);
  }
  return out;
}

}  // namespace vu::config

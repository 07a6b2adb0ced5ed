#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vu/error.hpp"

namespace vu::config {

/// Flat `key = value` text; `#` starts a comment, blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse(std::string_view text, std::string_view source = "<config>");
KeyValues load(const std::filesystem::path& path);
std::string serialize(const KeyValues& kv);

/// Typed access to one `prefix.` namespace of a KeyValues map. Every failure
/// raises ConfigError naming the full key path.
class Section {
 public:
  Section(const KeyValues& kv, std::string prefix) : kv_(&kv), prefix_(std::move(prefix)) {}

  std::string key(std::string_view name) const { return prefix_.empty() ? std::string(name) : prefix_ + "." + std::string(name); }
  bool has(std::string_view name) const { return kv_->count(key(name)) != 0; }

  std::string get_string(std::string_view name, std::optional<std::string> fallback = std::nullopt) const;
  double get_double(std::string_view name, std::optional<double> fallback = std::nullopt) const;
  long long get_int(std::string_view name, std::optional<long long> fallback = std::nullopt) const;
  std::uint64_t get_u64(std::string_view name, std::optional<std::uint64_t> fallback = std::nullopt) const;
  bool get_bool(std::string_view name, std::optional<bool> fallback = std::nullopt) const;
  std::vector<int> get_int_list(std::string_view name, std::optional<std::vector<int>> fallback = std::nullopt) const;

 private:
  const std::string* find(std::string_view name) const;

  const KeyValues* kv_;
  std::string prefix_;
};

}  // namespace vu::config

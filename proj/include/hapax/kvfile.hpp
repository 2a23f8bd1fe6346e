#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hapax/common.hpp"

namespace hapax {

// Flat UTF-8 key=value files, used for run manifests, checkpoint manifests
// and train configs. Lines starting with '#' and blank lines are ignored.
class KvFile {
 public:
  void set(const std::string& key, const std::string& value);
  void set_u64(const std::string& key, std::uint64_t v);
  void set_i64(const std::string& key, std::int64_t v);
  void set_f64(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;  // throws FormatError
  std::optional<std::string> get_opt(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  std::uint64_t get_u64_or(const std::string& key, std::uint64_t dflt) const;
  double get_f64_or(const std::string& key, double dflt) const;
  bool get_bool_or(const std::string& key, bool dflt) const;
  std::string get_or(const std::string& key, const std::string& dflt) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  void write(const std::filesystem::path& path) const;
  void append_to(const std::filesystem::path& path) const;
  static KvFile read(const std::filesystem::path& path);
  static KvFile parse(const std::string& text, const std::string& origin);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace hapax

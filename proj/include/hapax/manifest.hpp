#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hapax/kvfile.hpp"

namespace hapax {

inline constexpr const char* kToolVersion = "0.1.0";

// Run manifest written next to a command's outputs before long-running work
// starts: command line, resolved configuration, seeds and input hashes.
// Re-running a command with an identical manifest in deterministic mode
// reproduces its artifacts.
class RunManifest {
 public:
  RunManifest(std::string command, const std::filesystem::path& out_dir);

  void set(const std::string& key, const std::string& value);
  void set_u64(const std::string& key, std::uint64_t v);
  void set_f64(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);
  void add_input(const std::string& label, const std::filesystem::path& file);

  // Writes manifest.txt in the output directory.
  void write();
  // Appends the elapsed wall-clock once the command finishes.
  void finish();

  const std::filesystem::path& path() const { return path_; }
  KvFile& kv() { return kv_; }

 private:
  std::filesystem::path path_;
  KvFile kv_;
  std::chrono::steady_clock::time_point started_;
  bool written_ = false;
};

}  // namespace hapax

#include "hapax/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

#include "hapax/checkpoint.hpp"

namespace hapax {

RunManifest::RunManifest(std::string command,
                         const std::filesystem::path& out_dir)
    : path_(out_dir / "manifest.txt"),
      started_(std::chrono::steady_clock::now()) {
  std::filesystem::create_directories(out_dir);
  kv_.set("tool_version", kToolVersion);
  kv_.set("command", std::move(command));
  std::time_t now = std::time(nullptr);
  char buf[64];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  kv_.set("started_at", buf);
}

void RunManifest::set(const std::string& key, const std::string& value) {
  kv_.set(key, value);
}
void RunManifest::set_u64(const std::string& key, std::uint64_t v) {
  kv_.set_u64(key, v);
}
void RunManifest::set_f64(const std::string& key, double v) {
  kv_.set_f64(key, v);
}
void RunManifest::set_bool(const std::string& key, bool v) {
  kv_.set_bool(key, v);
}

void RunManifest::add_input(const std::string& label,
                            const std::filesystem::path& file) {
  char hex[24];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(file_checksum(file)));
  kv_.set("input." + label + ".path", file.string());
  kv_.set("input." + label + ".fnv1a64", hex);
}

void RunManifest::write() {
  kv_.write(path_);
  written_ = true;
}

void RunManifest::finish() {
  if (!written_) write();
  auto elapsed = std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - started_)
                     .count();
  KvFile tail;
  tail.set_f64("wall_clock_seconds", elapsed);
  tail.append_to(path_);
}

}  // namespace hapax

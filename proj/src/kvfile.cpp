#include "hapax/kvfile.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hapax {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void KvFile::set(const std::string& key, const std::string& value) {
  for (auto& e : entries_) {
    if (e.first == key) {
      e.second = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KvFile::set_u64(const std::string& key, std::uint64_t v) {
  set(key, std::to_string(v));
}

void KvFile::set_i64(const std::string& key, std::int64_t v) {
  set(key, std::to_string(v));
}

void KvFile::set_f64(const std::string& key, double v) {
  set(key, format_double(v));
}

void KvFile::set_bool(const std::string& key, bool v) {
  set(key, v ? "true" : "false");
}

bool KvFile::has(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return true;
  return false;
}

const std::string& KvFile::get(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return e.second;
  throw FormatError("missing key '" + key + "'");
}

std::optional<std::string> KvFile::get_opt(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return e.second;
  return std::nullopt;
}

std::uint64_t KvFile::get_u64(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw FormatError("key '" + key + "': not an unsigned integer: " + s);
  return v;
}

double KvFile::get_f64(const std::string& key) const {
  const std::string& s = get(key);
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("key '" + key + "': not a number: " + s);
  }
}

bool KvFile::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw FormatError("key '" + key + "': not a boolean: " + s);
}

std::uint64_t KvFile::get_u64_or(const std::string& key,
                                 std::uint64_t dflt) const {
  return has(key) ? get_u64(key) : dflt;
}

double KvFile::get_f64_or(const std::string& key, double dflt) const {
  return has(key) ? get_f64(key) : dflt;
}

bool KvFile::get_bool_or(const std::string& key, bool dflt) const {
  return has(key) ? get_bool(key) : dflt;
}

std::string KvFile::get_or(const std::string& key,
                           const std::string& dflt) const {
  auto v = get_opt(key);
  return v ? *v : dflt;
}

void KvFile::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  for (const auto& e : entries_) out << e.first << "=" << e.second << "\n";
  if (!out) throw FormatError("write failed: " + path.string());
}

void KvFile::append_to(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw FormatError("cannot open for appending: " + path.string());
  for (const auto& e : entries_) out << e.first << "=" << e.second << "\n";
}

KvFile KvFile::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

KvFile KvFile::parse(const std::string& text, const std::string& origin) {
  KvFile kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw FormatError(origin + ":" + std::to_string(lineno) +
                        ": expected key=value, got: " + t);
    kv.entries_.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

}  // namespace hapax

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "hapax/common.hpp"

namespace hapax {

// Minimal CSV writer: header row first, numeric cells, no quoting needed for
// the exported schemas.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path,
            std::initializer_list<std::string> header)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot open for writing: " + path.string());
    bool first = true;
    for (const auto& h : header) {
      if (!first) out_ << ',';
      out_ << h;
      first = false;
    }
    out_ << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    bool first = true;
    for (const auto& c : cells) {
      if (!first) out_ << ',';
      out_ << c;
      first = false;
    }
    out_ << '\n';
  }

  void flush() { out_.flush(); }

  static std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
  }

 private:
  std::ofstream out_;
};

}  // namespace hapax

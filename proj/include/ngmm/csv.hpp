#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ngmm/common.hpp"

namespace ngmm {

/// Minimal CSV support: UTF-8, one header row, comma separated, no quoting
/// (the formats this toolkit defines never contain embedded commas).
/// Lines starting with '#' are treated as comments; the writers use them
/// for unit annotations.
class CsvReader {
 public:
  explicit CsvReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw ParseError("cannot open file: " + path);
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.empty() || line[0] == '#') continue;
      split(line, header_);
      break;
    }
    if (header_.empty()) throw SchemaError("empty CSV (no header): " + path);
  }

  /// Index of a required column; SchemaError names the missing column.
  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return static_cast<int>(i);
    throw SchemaError("missing column '" + name + "' in " + path_);
  }

  int column_opt(const std::string& name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return static_cast<int>(i);
    return -1;
  }

  const std::vector<std::string>& header() const { return header_; }

  /// Read the next data row; false at EOF.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      split(line, fields);
      if (fields.size() != header_.size())
        throw ParseError(path_ + ":" + std::to_string(line_no_) +
                         ": expected " + std::to_string(header_.size()) +
                         " fields, got " + std::to_string(fields.size()));
      return true;
    }
    return false;
  }

  double num(const std::vector<std::string>& fields, int col) const {
    const std::string& s = fields[static_cast<std::size_t>(col)];
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
      throw ParseError(path_ + ":" + std::to_string(line_no_) +
                       ": non-finite or malformed number '" + s + "'");
    return v;
  }

  long line_no() const { return line_no_; }
  const std::string& path() const { return path_; }

 private:
  static void split(const std::string& line, std::vector<std::string>& out) {
    out.clear();
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        out.emplace_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
  }

  std::string path_;
  std::ifstream in_;
  std::vector<std::string> header_;
  long line_no_ = 0;
};

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

/// Writes to a temp file and renames on close, so partial outputs never
/// appear under the final name.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path)
      : path_(path), tmp_(path + ".tmp"), out_(tmp_) {
    if (!out_) throw ParseError("cannot open file for writing: " + tmp_);
  }

  ~CsvWriter() {
    if (!closed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }

  void comment(const std::string& text) { out_ << "# " << text << "\n"; }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << "\n";
  }

  void close() {
    out_.close();
    std::filesystem::rename(tmp_, path_);
    closed_ = true;
  }

 private:
  std::string path_, tmp_;
  std::ofstream out_;
  bool closed_ = false;
};

}  // namespace ngmm

#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace fgdd {

// Minimal RFC-4180 writer: CRLF rows, '.' decimal, 17 significant digits for
// doubles. '#'-prefixed comment lines carry the effective configuration.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void comment(const std::string& line) { out_ << "# " << line << "\r\n"; }

  CsvWriter& field(const std::string& s) {
    sep();
    bool needs_quote = s.find_first_of(",\"\r\n") != std::string::npos;
    if (!needs_quote) {
      out_ << s;
    } else {
      out_ << '"';
      for (char c : s) {
        if (c == '"') out_ << '"';
        out_ << c;
      }
      out_ << '"';
    }
    return *this;
  }

  CsvWriter& field(double v) { return field(format_double(v)); }
  CsvWriter& field(int v) { return field(std::to_string(v)); }
  CsvWriter& field(long v) { return field(std::to_string(v)); }
  CsvWriter& field(unsigned long long v) { return field(std::to_string(v)); }

  // omitted / not-applicable value
  CsvWriter& empty() {
    sep();
    return *this;
  }

  void end_row() {
    out_ << "\r\n";
    first_ = true;
  }

  void header(const std::vector<std::string>& names) {
    for (const auto& n : names) field(n);
    end_row();
  }

  static std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }

  std::ostream& out_;
  bool first_ = true;
};

}  // namespace fgdd

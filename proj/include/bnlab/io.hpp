#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bnlab {

/// Round-trippable decimal text for a double (17 significant digits).
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Accumulates CSV text; the header is mandatory and fixes the column count.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) : columns_(header.size()) { append_row(header); }

  CsvWriter& cell(double x) { return cell(format_double(x)); }
  CsvWriter& cell(std::string_view text) {
    if (pending_ > 0) text_ += ',';
    text_.append(text);
    ++pending_;
    return *this;
  }
  CsvWriter& cell(long long n) { return cell(std::to_string(n)); }

  void end_row() {
    if (pending_ != columns_) throw std::logic_error("CSV row width does not match header");
    text_ += '\n';
    pending_ = 0;
  }

  const std::string& str() const { return text_; }

 private:
  void append_row(const std::vector<std::string>& cells) {
    for (const auto& c : cells) cell(std::string_view(c));
    end_row();
  }

  std::size_t columns_;
  std::size_t pending_ = 0;
  std::string text_;
};

}  // namespace bnlab

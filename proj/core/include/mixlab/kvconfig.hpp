#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mixlab {

/// Flat `key = value` text with optional `[section]` headers and `#` comments.
/// Keys are addressed as "section.key" (or just "key" before any header).
class KvDocument {
 public:
  struct Entry {
    std::string key;
    std::string value;
    int line = 0;
  };

  static KvDocument parse(std::string_view text);
  static KvDocument load(const std::string& path);

  void set(const std::string& key, std::string value);
  bool contains(const std::string& key) const;
  const Entry* find(const std::string& key) const;
  const std::vector<Entry>& entries() const { return entries_; }

  /// Serializes back to text, grouping dotted keys under section headers in
  /// first-seen order.
  std::string to_text() const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
std::string format_doubles(const std::vector<double>& v, std::string_view sep = ",");

double parse_double(std::string_view s, int line = 0);
long long parse_int(std::string_view s, int line = 0);
std::vector<double> parse_doubles(std::string_view s, int line = 0);

}  // namespace mixlab

#include "mixlab/kvconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mixlab/common.hpp"

namespace mixlab {
namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

KvDocument KvDocument::parse(std::string_view text) {
  KvDocument doc;
  std::string section;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (nl == text.size()) break;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError("malformed section header", line_no);
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.find_first_of(" \t=") != std::string::npos) {
        throw ConfigError("malformed section name '" + section + "'", line_no);
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'", line_no);
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key", line_no);
    if (key.find_first_of(" \t") != std::string_view::npos) {
      throw ConfigError("key contains whitespace", line_no);
    }
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (doc.contains(full)) throw ConfigError("duplicate key '" + full + "'", line_no);
    doc.index_[full] = doc.entries_.size();
    doc.entries_.push_back({full, std::string(trim(line.substr(eq + 1))), line_no});
    if (nl == text.size()) break;
  }
  return doc;
}

KvDocument KvDocument::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void KvDocument::set(const std::string& key, std::string value) {
  if (auto it = index_.find(key); it != index_.end()) {
    entries_[it->second].value = std::move(value);
    return;
  }
  index_[key] = entries_.size();
  entries_.push_back({key, std::move(value), 0});
}

bool KvDocument::contains(const std::string& key) const { return index_.count(key) != 0; }

const KvDocument::Entry* KvDocument::find(const std::string& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::string KvDocument::to_text() const {
  std::vector<std::string> sections;
  std::map<std::string, std::vector<const Entry*>> grouped;
  for (const auto& e : entries_) {
    const auto dot = e.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : e.key.substr(0, dot);
    if (!grouped.count(sec)) sections.push_back(sec);
    grouped[sec].push_back(&e);
  }
  std::ostringstream out;
  // Unsectioned keys must precede the first header.
  if (grouped.count("")) {
    for (const auto* e : grouped[""]) out << e->key << " = " << e->value << "\n";
  }
  for (const auto& sec : sections) {
    if (sec.empty()) continue;
    if (out.tellp() > 0) out << "\n";
    out << "[" << sec << "]\n";
    for (const auto* e : grouped[sec]) {
      out << e->key.substr(sec.size() + 1) << " = " << e->value << "\n";
    }
  }
  return out.str();
}

std::string KvDocument::get_string(const std::string& key, const std::string& fallback) const {
  const auto* e = find(key);
  return e ? e->value : fallback;
}

double KvDocument::get_double(const std::string& key, double fallback) const {
  const auto* e = find(key);
  return e ? parse_double(e->value, e->line) : fallback;
}

long long KvDocument::get_int(const std::string& key, long long fallback) const {
  const auto* e = find(key);
  return e ? parse_int(e->value, e->line) : fallback;
}

bool KvDocument::get_bool(const std::string& key, bool fallback) const {
  const auto* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  throw ConfigError("expected boolean for '" + key + "', got '" + e->value + "'", e->line);
}

std::vector<double> KvDocument::get_doubles(const std::string& key,
                                            std::vector<double> fallback) const {
  const auto* e = find(key);
  return e ? parse_doubles(e->value, e->line) : fallback;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_doubles(const std::vector<double>& v, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += format_double(v[i]);
  }
  return out;
}

double parse_double(std::string_view s, int line) {
  s = trim(s);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("expected a number, got '" + std::string(s) + "'", line);
  }
  return v;
}

long long parse_int(std::string_view s, int line) {
  s = trim(s);
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("expected an integer, got '" + std::string(s) + "'", line);
  }
  return v;
}

std::vector<double> parse_doubles(std::string_view s, int line) {
  std::vector<double> out;
  s = trim(s);
  if (s.empty()) return out;
  size_t pos = 0;
  while (true) {
    const auto comma = s.find_first_of(",;", pos);
    out.push_back(parse_double(s.substr(pos, comma - pos), line));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace mixlab

#include "metakey/harness/ini.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace metakey::harness {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (c == ' ' || c == '\t') {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += c;
  }
  return out;
}

}  // namespace

const IniEntry* IniSection::find(std::string_view key) const {
  for (const auto& e : entries) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

IniDocument IniDocument::parse(std::string_view text, const std::string& origin) {
  IniDocument doc;
  doc.sections.push_back({"", 0, {}});
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section heading");
      std::string name = collapse_spaces(trim(line.substr(1, line.size() - 2)));
      if (name.empty()) throw ConfigError(where + ": empty section name");
      if (doc.find(name) != nullptr) throw ConfigError(where + ": duplicate section [" + name + "]");
      doc.sections.push_back({name, line_no, {}});
    } else {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
      std::string key(trim(line.substr(0, eq)));
      std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError(where + ": missing key");
      auto& section = doc.sections.back();
      if (section.find(key) != nullptr) {
        throw ConfigError(where + ": duplicate key '" + key + "' in [" + section.name + "]");
      }
      section.entries.push_back({key, value, line_no});
    }
    if (end == text.size()) break;
  }
  return doc;
}

IniDocument IniDocument::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

const IniSection* IniDocument::find(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::vector<const IniSection*> IniDocument::with_prefix(std::string_view prefix) const {
  std::vector<const IniSection*> out;
  for (const auto& s : sections) {
    if (s.name.size() > prefix.size() + 1 && s.name.starts_with(prefix) &&
        s.name[prefix.size()] == ' ') {
      out.push_back(&s);
    }
  }
  return out;
}

SectionReader::SectionReader(const IniSection* section, std::string origin)
    : section_(section), origin_(std::move(origin)) {}

bool SectionReader::has(std::string_view key) const {
  return section_ != nullptr && section_->find(key) != nullptr;
}

const IniEntry* SectionReader::entry(std::string_view key) {
  if (section_ == nullptr) return nullptr;
  const IniEntry* e = section_->find(key);
  if (e != nullptr) used_.emplace_back(key);
  return e;
}

void SectionReader::fail(const IniEntry& e, const std::string& what) const {
  throw ConfigError(origin_ + ":" + std::to_string(e.line) + ": [" + section_->name + "] " + e.key +
                    ": " + what);
}

std::string SectionReader::text(std::string_view key, const std::string& fallback) {
  const IniEntry* e = entry(key);
  return e != nullptr ? e->value : fallback;
}

std::string SectionReader::text(std::string_view key) {
  const IniEntry* e = entry(key);
  if (e == nullptr) {
    const std::string sec = section_ != nullptr ? section_->name : std::string("?");
    throw ConfigError(origin_ + ": [" + sec + "] is missing required key '" + std::string(key) + "'");
  }
  return e->value;
}

std::int64_t SectionReader::integer(std::string_view key, std::int64_t fallback) {
  const IniEntry* e = entry(key);
  if (e == nullptr) return fallback;
  std::int64_t v = 0;
  const char* first = e->value.data();
  const char* last = first + e->value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) fail(*e, "expected an integer, got '" + e->value + "'");
  return v;
}

std::int64_t SectionReader::integer(std::string_view key) {
  text(key);  // presence check with the standard message
  used_.pop_back();
  return integer(key, 0);
}

double SectionReader::number(std::string_view key, double fallback) {
  const IniEntry* e = entry(key);
  if (e == nullptr) return fallback;
  double v = 0.0;
  const char* first = e->value.data();
  const char* last = first + e->value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    fail(*e, "expected a finite number, got '" + e->value + "'");
  }
  return v;
}

bool SectionReader::boolean(std::string_view key, bool fallback) {
  const IniEntry* e = entry(key);
  if (e == nullptr) return fallback;
  if (e->value == "true" || e->value == "yes" || e->value == "1") return true;
  if (e->value == "false" || e->value == "no" || e->value == "0") return false;
  fail(*e, "expected true or false, got '" + e->value + "'");
}

std::vector<std::string> SectionReader::list(std::string_view key) {
  std::vector<std::string> out;
  const IniEntry* e = entry(key);
  if (e == nullptr) return out;
  // Commas inside braces belong to a range expression, not the list.
  std::string current;
  int depth = 0;
  for (char c : e->value) {
    if (c == '{') ++depth;
    if (c == '}') --depth;
    if (c == ',' && depth == 0) {
      if (auto t = trim(current); !t.empty()) out.emplace_back(t);
      current.clear();
    } else {
      current += c;
    }
  }
  if (auto t = trim(current); !t.empty()) out.emplace_back(t);
  return out;
}

std::vector<int> SectionReader::int_list(std::string_view key, const std::vector<int>& fallback) {
  if (!has(key)) return fallback;
  const IniEntry* e = section_->find(key);
  std::vector<int> out;
  for (const auto& item : list(key)) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      fail(*e, "expected a list of integers, got '" + e->value + "'");
    }
    out.push_back(v);
  }
  return out;
}

void SectionReader::finish() const {
  if (section_ == nullptr) return;
  for (const auto& e : section_->entries) {
    if (std::find(used_.begin(), used_.end(), e.key) == used_.end()) {
      throw ConfigError(origin_ + ":" + std::to_string(e.line) + ": unknown key '" + e.key +
                        "' in [" + section_->name + "]");
    }
  }
}

}  // namespace metakey::harness

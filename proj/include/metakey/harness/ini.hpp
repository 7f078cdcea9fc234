#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metakey::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IniEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct IniSection {
  std::string name;  // full heading text, e.g. "split train"
  int line = 0;
  std::vector<IniEntry> entries;

  const IniEntry* find(std::string_view key) const;
};

/// Flat sectioned key-value text:
///   # comment            (also after a value: "key = 3  # note")
///   [section name]
///   key = value
/// Keys before the first heading land in a section named "".
/// Duplicate sections or duplicate keys within a section are errors.
struct IniDocument {
  std::vector<IniSection> sections;

  static IniDocument parse(std::string_view text, const std::string& origin = "<config>");
  static IniDocument load(const std::string& path);

  const IniSection* find(std::string_view name) const;
  /// Sections whose heading starts with "<prefix> ".
  std::vector<const IniSection*> with_prefix(std::string_view prefix) const;
};

/// Typed accessors that name the section, key and line on failure, and
/// track which keys were consumed so leftovers can be reported.
class SectionReader {
 public:
  SectionReader(const IniSection* section, std::string origin);

  bool present() const { return section_ != nullptr; }
  bool has(std::string_view key) const;
  std::string text(std::string_view key, const std::string& fallback);
  std::string text(std::string_view key);  // required
  std::int64_t integer(std::string_view key, std::int64_t fallback);
  std::int64_t integer(std::string_view key);
  double number(std::string_view key, double fallback);
  bool boolean(std::string_view key, bool fallback);
  std::vector<std::string> list(std::string_view key);  // comma separated, may be empty
  std::vector<int> int_list(std::string_view key, const std::vector<int>& fallback);

  /// Throws ConfigError if any key was never read.
  void finish() const;

 private:
  const IniEntry* entry(std::string_view key);
  [[noreturn]] void fail(const IniEntry& e, const std::string& what) const;

  const IniSection* section_;
  std::string origin_;
  std::vector<std::string> used_;
};

}  // namespace metakey::harness

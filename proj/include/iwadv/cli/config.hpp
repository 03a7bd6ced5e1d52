#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace iwadv::cli {

/// Bad key or value; the CLI reports it as a usage error.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat "section.key" -> value settings over a fixed schema. Files are INI with
/// one [section] per module; overrides are "section.key=value".
class RunConfig {
 public:
  RunConfig();  // every key at its default

  static const std::map<std::string, std::string>& defaults();

  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);

  const std::string& raw(const std::string& key) const;
  std::string str(const std::string& key) const { return raw(key); }
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;  // comma separated

  /// Canonical INI text: sections and keys sorted.
  std::string to_ini() const;
  /// FNV-1a 64 of to_ini(), as 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(const std::string& bytes);

struct MetricRecord {
  std::string name;
  double value = 0;
  double se = 0;
  std::string config_hash;

  bool operator==(const MetricRecord&) const = default;
};

/// Tab-separated "name value se config_hash" with a header row; values keep
/// round-trip precision. Throws on empty input or an unwritable path.
void emit_report(const std::vector<MetricRecord>& metrics, const std::filesystem::path& path);
std::vector<MetricRecord> parse_report(const std::filesystem::path& path);

}  // namespace iwadv::cli

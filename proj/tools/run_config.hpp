#pragma once

// Flat key = value run configuration shared by every subcommand. Values are
// kept as text and parsed on access, so a snapshot is just the sorted map.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ega/adapter.hpp"
#include "ega/embeddings.hpp"
#include "ega/metrics.hpp"
#include "ega/train.hpp"

namespace ega::cli {

struct KeyInfo {
  const char* key;
  const char* default_value;
  const char* help;
};

/// Every recognised key with its default.
const std::vector<KeyInfo>& config_keys();

class RunConfig {
 public:
  RunConfig();

  /// Throws ConfigError for an unknown key.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has_value(const std::string& key) const { return !get(key).empty(); }

  /// Lines of `key = value` (comments start with # or ;, [sections] are ignored).
  void merge_file(const std::filesystem::path& path);

  std::string text(const std::string& key) const { return get(key); }
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed() const;
  std::vector<std::size_t> count_list(const std::string& key) const;
  std::vector<std::uint64_t> seed_list() const;

  /// Sorted `key = value` lines; output location keys are left out so the
  /// hash only reflects what determines the results.
  std::string snapshot() const;
  std::string hash() const;

  AdapterConfig adapter_config(std::size_t dim) const;
  TrainConfig train_config(Variant variant) const;
  SplitSpec split_spec() const;
  EvalOptions eval_options() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// EGA_OUT_DIR if set, else the `out` key.
std::filesystem::path output_root(const RunConfig& cfg);
/// <root>/<run-id>, with run-id defaulting to `<command>-<first 12 hex of the hash>`.
std::filesystem::path run_directory(const RunConfig& cfg, const std::string& command);

}  // namespace ega::cli

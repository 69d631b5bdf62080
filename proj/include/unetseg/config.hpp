#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unetseg/synth.hpp"
#include "unetseg/trainer.hpp"

namespace unetseg {

/// Flat key=value run configuration. Every key has a default; unknown keys
/// are rejected. Layering: defaults, then the config file, then UNETSEG_*
/// environment variables, then command-line overrides.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<std::pair<std::string, std::string>>& defaults();
  static bool is_key(std::string_view key);
  /// UNETSEG_ followed by the key upper-cased with '.' mapped to '_'.
  static std::string env_name(std::string_view key);

  void set(std::string_view key, std::string value);
  const std::string& get(std::string_view key) const;

  /// Lines of `key = value`; blank lines and '#' comments are ignored.
  void merge_text(std::string_view text, const std::string& source);
  void merge_file(const std::filesystem::path& path);
  /// `lookup` returns the value of an environment variable, if set.
  void merge_environment(const std::function<std::optional<std::string>(const std::string&)>& lookup);
  void merge_environment();
  /// "key=value" overrides.
  void merge_assignment(std::string_view assignment);

  /// Normalised text that parses back to the same configuration.
  std::string dump() const;

  std::string text(std::string_view key) const { return get(key); }
  double real(std::string_view key) const;
  std::uint64_t integer(std::string_view key) const;
  bool flag(std::string_view key) const;
  std::vector<std::size_t> sizes(std::string_view key) const;
  std::optional<std::string> optional_text(std::string_view key) const;

  ModelConfig model() const;
  HyperParams hyper() const;
  TrainSpec train_spec() const;
  SynthOptions synth() const;

 private:
  std::vector<std::pair<std::string, std::string>> values_;
};

}  // namespace unetseg

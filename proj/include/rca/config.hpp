#pragma once

#include <map>
#include <string>
#include <vector>

#include "rca/data.hpp"
#include "rca/model.hpp"
#include "rca/training.hpp"

namespace rca {

/// Plain `key = value` text. '#' starts a comment; blank lines are
/// ignored. A repeated key is an error.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source);
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }
  /// "source:line" where the key was defined.
  std::string where(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::string source_;
};

/// Everything a training run needs besides the data.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  FoldSpec folds;
};

/// Starts from the built-in defaults and overrides every key present.
/// Unknown keys and unparsable values raise ConfigError.
RunConfig run_config_from(const KeyValues& kv);
RunConfig load_run_config(const std::string& path);
/// Every key with its resolved value; parsing the text gives back `cfg`.
std::string to_text(const RunConfig& cfg);

std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text, const std::string& source);

SyntheticScenario scenario_from(const KeyValues& kv);
std::string to_text(const SyntheticScenario& scenario);

}  // namespace rca

#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pathogan/data.hpp"
#include "pathogan/losses.hpp"
#include "pathogan/model.hpp"

namespace pathogan {

using ConfigValue = std::variant<bool, int64_t, double, std::string>;

struct KeySpec {
  std::string key;
  ConfigValue def;
  std::string help;
};

// Flat dotted-key configuration with a fixed schema: every run is described
// by one file (TOML or JSON) plus command-line overrides. Unknown keys are
// rejected; the canonical form (sorted key=value lines) backs a stable hash.
class RunConfig {
 public:
  static const std::vector<KeySpec>& schema();
  static RunConfig defaults();
  static RunConfig from_file(const std::string& path);

  // "key=value" with the schema's type; throws ConfigError
  void apply_override(const std::string& assignment);
  void set(const std::string& key, ConfigValue value);

  bool get_bool(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  std::string canonical() const;
  std::string hash() const;  // FNV-1a 64 over the canonical form, hex

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  // typed views into the structured configs the modules consume
  ModelConfig model_config() const;
  LossWeights loss_weights() const;
  SliceSelection slice_selection() const;
  AugmentationConfig augmentation_config() const;

 private:
  std::map<std::string, ConfigValue> values_;
};

std::string fnv1a_hex(const std::string& data);

}  // namespace pathogan

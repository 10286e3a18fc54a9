#ifndef RVMDE_CONFIG_HPP
#define RVMDE_CONFIG_HPP

#include <string>
#include <vector>

#include "json.hpp"
#include "rvmde/data.hpp"
#include "rvmde/discretization.hpp"
#include "rvmde/model.hpp"
#include "rvmde/training.hpp"

namespace rvmde {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json bins_to_json(const SidBins& bins);
SidBins bins_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json preprocess_config_to_json(const PreprocessConfig& cfg);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j);

/// One serializable artifact covering the whole pipeline. Every section is
/// optional in the file; missing keys take the defaults above.
struct RunConfig {
  ModelConfig model;
  SidBins bins = sid_thresholds(1.0, 80.0, 80);
  TrainConfig train;
  PreprocessConfig prep;
  int threads = 0;  // 0 = hardware default

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  /// Load from a JSON file (empty path = all defaults), then apply dotted
  /// overrides of the form "section.key=value".
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {});
};

/// Apply "a.b.c=value" onto a JSON tree; the value is parsed as JSON when
/// possible and treated as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& dotted);

}  // namespace rvmde

#endif  // RVMDE_CONFIG_HPP

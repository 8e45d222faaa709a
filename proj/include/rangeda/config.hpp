#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rangeda/geometry.hpp"

namespace rangeda {

enum class TargetProcessing { upsample_then_pool, project_at_source_resolution };
const char* target_processing_name(TargetProcessing p);

/// Sensors carry their native grid (height = beams, full-scale width).
struct ScenarioConfig {
  std::string name = "k2n-like";
  SensorConfig source_sensor;
  SensorConfig target_sensor;
  Index source_height = 64;  // source_resolution, full scale
  Index source_width = 2048;
  TargetProcessing target_processing = TargetProcessing::upsample_then_pool;
  Index base_channels = 32;  // full-scale network width
  Index width_divisor = 1;   // desk scale: every image width is divided by this
  Index channel_divisor = 4; // desk scale: base_channels is divided by this

  static ScenarioConfig preset(const std::string& name);
  void validate() const;
  Index network_channels() const { return base_channels / channel_divisor; }
};

/// Components of the method that can be switched off one at a time.
struct Switches {
  bool source_first = true;
  bool recon_pretrain = true;
  bool enhanced_prototypes = true;
  bool averaged_prototypes = true;
  bool deactivate_mask = true;
  bool confidence_weighting = true;
  bool background_down_weighting = true;

  static const std::vector<std::string>& names();
  bool& by_name(const std::string& name);  // ConfigError on unknown names
  bool by_name(const std::string& name) const;
};

struct TrainConfig {
  Index pretrain_epochs = 50;
  Index joint_epochs = 30;
  Index batch_per_domain = 4;
  double alpha = 0.99;
  double p_inc = 0.01;
  double p_dw = 0.1;
  double lambda = 1.0;
  double lr = 0.01;
  double pretrain_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  Index scale_divisor = 10;
  std::uint64_t seed = 0;
  Index reservoir = 200000;
  KnnParams knn;
  Switches switches;

  void validate() const;
  Index scaled_pretrain_epochs() const;
  Index scaled_joint_epochs() const;
  double scaled_p_inc() const { return p_inc * double(scale_divisor); }
};

/// Everything a run needs: scenario, hyperparameters, and data locations.
struct Settings {
  ScenarioConfig scenario = ScenarioConfig::preset("k2n-like");
  TrainConfig train;
  std::filesystem::path source_manifest;
  std::filesystem::path target_manifest;
  std::filesystem::path eval_manifest;  // optional held-out labelled target
  std::filesystem::path runs_dir = "runs";
  std::string run_name = "default";

  struct Key {
    std::string name;
    std::string help;
  };
  static const std::vector<Key>& keys();

  /// ConfigError for unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// key = value text covering every key, in keys() order.
  std::string to_text() const;
  void validate() const;

  std::filesystem::path run_dir() const { return runs_dir / run_name; }
};

using KeyValues = std::map<std::string, std::string>;

/// Parses "key = value" lines; '#' starts a comment.
KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& path);

/// Defaults, then file values, then flag values. A "scenario" key resets the
/// scenario to its preset before any other key is applied.
Settings resolve_settings(const KeyValues& file, const KeyValues& flags);

}  // namespace rangeda

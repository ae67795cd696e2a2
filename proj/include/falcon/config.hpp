#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "falcon/inference.hpp"
#include "falcon/losses.hpp"
#include "falcon/network.hpp"
#include "falcon/training.hpp"

namespace falcon {

/// Synthetic benchmark and ingestion settings.
struct DataConfig {
  int source_classes = 10;
  int source_samples = 20;
  int patients = 13;
  int slices = 30;
  double labeled_fraction = 0.4;
  int size = 32;
  int n_train = 8;
  int n_val = 2;
  bool drop_empty_masks = false;

  void validate() const;
};

struct FalconConfig {
  NetworkConfig network = NetworkConfig::toy();
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  void validate() const;
};

nlohmann::json to_json(const NetworkConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const DiscriminatorConfig& c);
nlohmann::json to_json(const FalconConfig& c);
NetworkConfig network_from_json(const nlohmann::json& j);
DiscriminatorConfig disc_from_json(const nlohmann::json& j);
FalconConfig config_from_json(const nlohmann::json& j);

/// defaults < file < `key.path=value` overrides. Unknown keys raise UnknownConfigKey;
/// ill-typed or out-of-range values raise InvalidArgument.
FalconConfig resolve_config(const std::optional<std::filesystem::path>& file,
                            const std::vector<std::string>& overrides = {});
FalconConfig resolve_config_text(const std::string& text, const std::vector<std::string>& overrides = {});

std::string config_digest(const FalconConfig& c);
void write_config_snapshot(const FalconConfig& c, const std::filesystem::path& path);

}  // namespace falcon

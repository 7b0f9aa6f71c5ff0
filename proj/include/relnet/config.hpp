#pragma once

#include <string>

#include "json.hpp"
#include "relnet/train.hpp"

namespace relnet {

// Flat key-value JSON form of a training configuration; the config echo
// written next to every run re-parses to an identical struct.
nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config_file(const std::string& path);

}  // namespace relnet

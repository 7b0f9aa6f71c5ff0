#pragma once

#include <string>

#include "json.hpp"
#include "relnet/model.hpp"

namespace relnet {

// Binary container: 8-byte magic "RELCKPT1", u64 little-endian JSON length,
// JSON header (model geometry + caller metadata + per-parameter shape list),
// then the raw float64 parameter buffers in for_each_param order. Float64
// payloads round-trip bit-exactly.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const nlohmann::json& meta);

struct Checkpoint {
    ModelParams params;
    nlohmann::json meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace relnet

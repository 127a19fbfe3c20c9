#pragma once

#include <string>
#include <utility>

#include <json.hpp>

#include "lmcd/backbone.hpp"
#include "lmcd/tensor.hpp"

namespace lmcd {

// Little-endian flat container: magic "LMCD", a version word, a json header
// carrying the run configuration, then named rank-2 tensors stored as 32-bit
// floats. Save/load round-trips bit-exactly.
void save_weights(const std::string& path, const nlohmann::json& header,
                  const ParamSet<real>& params);

std::pair<nlohmann::json, ParamSet<real>> load_weights(
    const std::string& path);

}  // namespace lmcd

#pragma once

#include <cstdint>
#include <string>

#include "lidargen/params.hpp"

namespace lidargen {

inline constexpr uint32_t kCheckpointVersion = 1;

// LGCK container: magic "LGCK", format version, then a length-prefixed list
// of (name, shape, float32 payload) entries in dict order.
std::string encode_lgck(const ParamDict& dict, uint32_t version = kCheckpointVersion);
ParamDict decode_lgck(const std::string& bytes, const std::string& origin = "<memory>");

void write_lgck(const ParamDict& dict, const std::string& path,
                uint32_t version = kCheckpointVersion);
ParamDict read_lgck(const std::string& path);

}  // namespace lidargen

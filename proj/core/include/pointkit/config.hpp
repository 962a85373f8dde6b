#pragma once

#include <string>

#include "pointkit/network.hpp"

namespace pointkit {

/// Parses a backbone configuration from a `key = value` file. Lines starting
/// with '#' (and blank lines) are ignored; lists are comma-separated. Unknown
/// keys and malformed values raise with the offending line number. Keys not
/// present keep their defaults. The full schema is documented in the README.
BackboneConfig parse_backbone_config(const std::string& path);

/// Serializes a config in the same key = value schema.
std::string format_backbone_config(const BackboneConfig& cfg);

}  // namespace pointkit

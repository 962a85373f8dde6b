#pragma once

namespace pointkit {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace pointkit

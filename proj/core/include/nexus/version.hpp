#pragma once

namespace nexus {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace nexus

#pragma once

namespace eplap {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace eplap

#pragma once

namespace bmvc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace bmvc

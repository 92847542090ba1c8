#pragma once

namespace tgnn {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace tgnn

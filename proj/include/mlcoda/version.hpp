#pragma once

namespace mlcoda {
inline constexpr const char* kVersion = "0.1.0";
}

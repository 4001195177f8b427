#pragma once

namespace bvcox {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace bvcox

#pragma once

namespace atf {

inline constexpr const char* kVersion = "0.3.0";

}  // namespace atf

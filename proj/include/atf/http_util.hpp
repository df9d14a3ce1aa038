#pragma once

#include <string>
#include <string_view>
#include <utility>

#include "atf/error.hpp"

namespace atf {

/// "http://host:port/some/path" -> {"http://host:port", "/some/path"}.
inline std::pair<std::string, std::string> split_url(std::string_view url) {
  const auto scheme = url.find("://");
  if (scheme == std::string_view::npos)
    throw PreconditionError("http", "URL needs a scheme: " + std::string(url));
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

inline bool is_retryable_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

}  // namespace atf

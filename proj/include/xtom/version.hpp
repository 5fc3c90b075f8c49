#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#ifndef XTOM_VERSION
#define XTOM_VERSION "0.1.0"
#endif

namespace xtom {

inline constexpr const char* kVersion = XTOM_VERSION;

inline std::string hex_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace xtom

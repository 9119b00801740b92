#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>

namespace radiomap {

/// Verbosity from RADIOMAP_LOG: 0 silent, 1 progress (default), 2 debug.
inline int log_level() {
  static const int level = [] {
    const char* env = std::getenv("RADIOMAP_LOG");
    return env ? std::atoi(env) : 1;
  }();
  return level;
}

inline void log_at(int level, const char* fmt, ...) {
  if (log_level() < level) return;
  va_list args;
  va_start(args, fmt);
  std::vfprintf(stderr, fmt, args);
  std::fputc('\n', stderr);
  va_end(args);
}

#define RADIOMAP_LOG_INFO(...) ::radiomap::log_at(1, __VA_ARGS__)
#define RADIOMAP_LOG_DEBUG(...) ::radiomap::log_at(2, __VA_ARGS__)

}  // namespace radiomap

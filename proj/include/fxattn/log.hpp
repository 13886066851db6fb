#pragma once

// Minimal stderr logger.  FXATTN_LOG=error|warn|info|debug sets verbosity
// (default warn).

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace fxattn::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("FXATTN_LOG");
    if (env == nullptr) return Level::Warn;
    const std::string_view v(env);
    if (v == "error") return Level::Error;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[fxattn] " << names[static_cast<int>(level)] << ": " << msg << '\n';
}

inline void warn(std::string_view msg) { write(Level::Warn, msg); }
inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void debug(std::string_view msg) { write(Level::Debug, msg); }

}  // namespace fxattn::log

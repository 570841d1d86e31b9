#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace fleetchurn::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

inline Level& threshold() {
  static Level lvl = [] {
    const char* env = std::getenv("FLEETCHURN_LOG");
    if (!env) return Level::Warn;
    std::string s(env);
    if (s == "debug") return Level::Debug;
    if (s == "info") return Level::Info;
    if (s == "warn") return Level::Warn;
    if (s == "error") return Level::Error;
    if (s == "off") return Level::Off;
    return Level::Warn;
  }();
  return lvl;
}

inline std::mutex& mu() {
  static std::mutex m;
  return m;
}

inline void emit(Level lvl, const std::string& msg) {
  if (lvl < threshold()) return;
  static const char* names[] = {"DEBUG", "INFO", "WARN", "ERROR"};
  std::lock_guard<std::mutex> lock(mu());
  std::cerr << "[fleetchurn " << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

inline void debug(const std::string& m) { emit(Level::Debug, m); }
inline void info(const std::string& m) { emit(Level::Info, m); }
inline void warn(const std::string& m) { emit(Level::Warn, m); }
inline void error(const std::string& m) { emit(Level::Error, m); }

}  // namespace fleetchurn::log

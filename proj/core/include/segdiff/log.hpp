#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <string_view>

namespace segdiff::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the active sink; returns the previous one. Passing an empty sink
// restores the default stderr sink.
Sink set_sink(Sink sink);
void set_level(Level level);
Level level();
void write(Level level, std::string_view message);

template <typename... Args>
void emit(Level lvl, const Args&... args) {
  if (lvl < level()) return;
  std::ostringstream os;
  (os << ... << args);
  write(lvl, os.str());
}

template <typename... Args>
void debug(const Args&... args) { emit(Level::kDebug, args...); }
template <typename... Args>
void info(const Args&... args) { emit(Level::kInfo, args...); }
template <typename... Args>
void warn(const Args&... args) { emit(Level::kWarn, args...); }
template <typename... Args>
void error(const Args&... args) { emit(Level::kError, args...); }

}  // namespace segdiff::log

#include "segdiff/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace segdiff::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& sink_slot() {
  static Sink sink;
  return sink;
}

Level initial_level() {
  const char* env = std::getenv("SEGDIFF_LOG_LEVEL");
  if (env == nullptr) return Level::kInfo;
  std::string v(env);
  if (v == "debug") return Level::kDebug;
  if (v == "warn") return Level::kWarn;
  if (v == "error") return Level::kError;
  return Level::kInfo;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> lvl{static_cast<int>(initial_level())};
  return lvl;
}

const char* tag(Level l) {
  switch (l) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
  }
  return "?";
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(sink_slot());
  sink_slot() = std::move(sink);
  return previous;
}

void set_level(Level lvl) { level_slot().store(static_cast<int>(lvl)); }

Level level() { return static_cast<Level>(level_slot().load()); }

void write(Level lvl, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink_slot()) {
    sink_slot()(lvl, message);
    return;
  }
  std::cerr << "[" << tag(lvl) << "] " << message << '\n';
}

}  // namespace segdiff::log

#include "bicnn/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace bicnn::log {
namespace {

Level level_from_env() {
  const char* env = std::getenv("BICNN_LOG_LEVEL");
  if (env == nullptr) return Level::warning;
  const std::string v(env);
  if (v == "debug") return Level::debug;
  if (v == "info") return Level::info;
  if (v == "error") return Level::error;
  if (v == "off") return Level::off;
  return Level::warning;
}

std::atomic<Level>& current() {
  static std::atomic<Level> level{level_from_env()};
  return level;
}

const char* tag(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warning: return "warning";
    case Level::error: return "error";
    case Level::off: break;
  }
  return "";
}

}  // namespace

Level threshold() { return current().load(); }
void set_threshold(Level level) { current().store(level); }

void write(Level level, std::string_view message) {
  if (level < threshold() || level == Level::off) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[bicnn " << tag(level) << "] " << message << '\n';
}

}  // namespace bicnn::log

#include "comap/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace comap::log {

namespace {
std::atomic<Level> g_level{Level::kInfo};
std::mutex g_mutex;
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void emit(Level at, std::string_view event, const std::string& fields) {
  if (static_cast<int>(at) > static_cast<int>(g_level.load())) return;
  const char* name = at == Level::kWarning ? "warn" : "info";
  std::lock_guard<std::mutex> lock(g_mutex);
  std::fprintf(stderr, "level=%s event=%.*s%s\n", name,
               static_cast<int>(event.size()), event.data(), fields.c_str());
}

}  // namespace comap::log

// SPDX-License-Identifier: Apache-2.0
#include "srtask/log.hpp"

#include <iostream>
#include <mutex>

namespace srtask::log {
namespace {

std::mutex g_mutex;
Sink g_sink;
Level g_min = Level::Info;

}  // namespace

void set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void set_min_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_min = level;
}

const char* level_name(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
  }
  return "?";
}

void write(Level level, const std::string& msg) {
  std::lock_guard lock(g_mutex);
  if (level < g_min) return;
  if (g_sink) {
    g_sink(level, msg);
    return;
  }
  std::cerr << "[" << level_name(level) << "] " << msg << '\n';
}

}  // namespace srtask::log

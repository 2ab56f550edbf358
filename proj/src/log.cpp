// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>

namespace babn {
namespace {

LogLevel parse_env() {
  const char* v = std::getenv("BABN_LOG_LEVEL");
  if (v == nullptr) return LogLevel::kWarn;
  const std::string s(v);
  if (s == "error") return LogLevel::kError;
  if (s == "info") return LogLevel::kInfo;
  if (s == "debug") return LogLevel::kDebug;
  return LogLevel::kWarn;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> level{static_cast<int>(parse_env())};
  return level;
}

const char* name(LogLevel l) {
  switch (l) {
    case LogLevel::kError: return "error";
    case LogLevel::kWarn: return "warn";
    case LogLevel::kInfo: return "info";
    case LogLevel::kDebug: return "debug";
  }
  return "?";
}

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(level_slot().load()); }

void set_log_level(LogLevel level) { level_slot().store(static_cast<int>(level)); }

void log(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) > level_slot().load()) return;
  std::cerr << "[" << name(level) << "] " << message << "\n";
}

}  // namespace babn

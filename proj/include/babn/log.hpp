// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

namespace babn {

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

/// Read once from BABN_LOG_LEVEL (error|warn|info|debug); defaults to warn.
LogLevel log_level();
void set_log_level(LogLevel level);
/// Writes "[level] message" to stderr when `level` is enabled.
void log(LogLevel level, const std::string& message);

}  // namespace babn

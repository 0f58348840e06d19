#pragma once

#include <string_view>

namespace bicnn::log {

enum class Level { debug = 0, info = 1, warning = 2, error = 3, off = 4 };

/// Messages below this level are dropped. Defaults to `warning`, or the
/// value of BICNN_LOG_LEVEL (debug|info|warning|error|off) when set.
Level threshold();
void set_threshold(Level level);

void write(Level level, std::string_view message);

inline void info(std::string_view message) { write(Level::info, message); }
inline void warning(std::string_view message) { write(Level::warning, message); }

}  // namespace bicnn::log

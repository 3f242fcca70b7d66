#pragma once

#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace fpad::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

using Field = std::pair<std::string_view, std::string>;

// One line per event: `ts=<iso8601> level=<lvl> event=<name> key=value ...`.
// Values containing spaces or quotes are double-quoted.
void event(Level level, std::string_view name, std::initializer_list<Field> fields = {});
void event(Level level, std::string_view name, std::span<const Field> fields);

inline void info(std::string_view name, std::initializer_list<Field> fields = {}) {
    event(Level::Info, name, fields);
}
inline void warn(std::string_view name, std::initializer_list<Field> fields = {}) {
    event(Level::Warn, name, fields);
}
inline void debug(std::string_view name, std::initializer_list<Field> fields = {}) {
    event(Level::Debug, name, fields);
}

// Defaults: std::cerr, Level::Info, timestamps on.
void set_sink(std::ostream* sink);
void set_level(Level level);
void set_timestamps(bool enabled);

std::string fmt_double(double v, int precision = 6);

// UTC, millisecond resolution, e.g. 2024-01-31T12:00:00.000Z.
std::string now_iso8601();

}  // namespace fpad::log

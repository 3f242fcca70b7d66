#include "fpad/log.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <mutex>
#include <sstream>

namespace fpad::log {
namespace {

std::mutex g_mutex;
std::ostream* g_sink = &std::cerr;
std::atomic<int> g_level{static_cast<int>(Level::Info)};
std::atomic<bool> g_timestamps{true};

const char* level_name(Level level) {
    switch (level) {
        case Level::Debug: return "debug";
        case Level::Info: return "info";
        case Level::Warn: return "warn";
        case Level::Error: return "error";
    }
    return "info";
}

bool needs_quotes(std::string_view v) {
    if (v.empty()) return true;
    for (char c : v) {
        if (c == ' ' || c == '"' || c == '=' || c == '\t' || c == '\n') return true;
    }
    return false;
}

void write_value(std::ostream& os, std::string_view v) {
    if (!needs_quotes(v)) {
        os << v;
        return;
    }
    os << '"';
    for (char c : v) {
        if (c == '"' || c == '\\') os << '\\';
        if (c == '\n') {
            os << "\\n";
            continue;
        }
        os << c;
    }
    os << '"';
}

}  // namespace

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

void event(Level level, std::string_view name, std::span<const Field> fields) {
    if (static_cast<int>(level) < g_level.load()) return;
    std::ostringstream line;
    if (g_timestamps.load()) line << "ts=" << now_iso8601() << ' ';
    line << "level=" << level_name(level) << " event=" << name;
    for (const auto& [key, value] : fields) {
        line << ' ' << key << '=';
        write_value(line, value);
    }
    line << '\n';
    std::lock_guard lock(g_mutex);
    if (g_sink != nullptr) {
        *g_sink << line.str();
        g_sink->flush();
    }
}

void event(Level level, std::string_view name, std::initializer_list<Field> fields) {
    event(level, name, std::span<const Field>(fields.begin(), fields.size()));
}

void set_sink(std::ostream* sink) {
    std::lock_guard lock(g_mutex);
    g_sink = sink;
}

void set_level(Level level) { g_level.store(static_cast<int>(level)); }

void set_timestamps(bool enabled) { g_timestamps.store(enabled); }

std::string fmt_double(double v, int precision) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

}  // namespace fpad::log

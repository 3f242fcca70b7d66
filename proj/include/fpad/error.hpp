#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpad {

// Root of every domain error. The CLI maps anything derived from Error to
// exit status 1; usage problems are handled before any of these are thrown.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io_error", message) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t line)
        : Error("parse_error", "line " + std::to_string(line) + ": " + message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config_error", message) {}
};

class DimensionError : public Error {
public:
    DimensionError(const std::string& message, std::size_t width, std::size_t height)
        : Error("dimension_error", message + " (got " + std::to_string(width) + "x" +
                                       std::to_string(height) + ")"),
          width_(width), height_(height) {}

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }

private:
    std::size_t width_;
    std::size_t height_;
};

class ShapeError : public Error {
public:
    ShapeError(const std::string& layer, const std::string& message)
        : Error("shape_error", layer + ": " + message), layer_(layer) {}

    const std::string& layer() const noexcept { return layer_; }

private:
    std::string layer_;
};

class StateError : public Error {
public:
    explicit StateError(const std::string& message) : Error("state_error", message) {}
};

class DuplicateIdError : public Error {
public:
    explicit DuplicateIdError(const std::string& id)
        : Error("duplicate_id", "duplicate record id " + id), id_(id) {}

    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class NotFoundError : public Error {
public:
    explicit NotFoundError(const std::string& message) : Error("not_found", message) {}
};

class ConflictError : public Error {
public:
    explicit ConflictError(const std::string& message) : Error("conflict", message) {}
};

// Carries one human-readable entry per offending item.
class ValidationError : public Error {
public:
    ValidationError(const std::string& message, std::vector<std::string> details)
        : Error("validation_error", message), details_(std::move(details)) {}

    const std::vector<std::string>& details() const noexcept { return details_; }

private:
    std::vector<std::string> details_;
};

// Checkpoint integrity failures; each has its own type so callers can tell
// a stale format from a damaged file.
class VersionError : public Error {
public:
    explicit VersionError(const std::string& message) : Error("version_mismatch", message) {}
};

class DigestError : public Error {
public:
    explicit DigestError(const std::string& message) : Error("digest_mismatch", message) {}
};

class TruncatedError : public Error {
public:
    explicit TruncatedError(const std::string& message) : Error("truncated", message) {}
};

}  // namespace fpad

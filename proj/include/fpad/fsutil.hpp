#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace fpad {

std::string read_file(const std::filesystem::path& path);

// Writes to `<path>.tmp.<pid>` then renames over `path`; parent directories
// are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// `/`-separated path of `target` relative to `base`.
std::string relative_generic(const std::filesystem::path& target, const std::filesystem::path& base);

}  // namespace fpad

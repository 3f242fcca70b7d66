#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace fpad {

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::string hex_encode(std::string_view bytes);
// Returns false on odd length or a non-hex character.
bool hex_decode(std::string_view hex, std::string& out);

}  // namespace fpad

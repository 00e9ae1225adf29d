#pragma once

#include <string>
#include <string_view>

namespace dmreuse {

std::string to_hex(std::string_view bytes);
std::string from_hex(std::string_view hex);
/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace dmreuse

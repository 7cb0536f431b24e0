#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lingedit {

std::string sha256_hex(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
/// Throws DataError on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace lingedit

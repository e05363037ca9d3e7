#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace esnet {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);
// First 8 bytes of the SHA-256 digest, big-endian.
std::uint64_t hash64(std::string_view bytes);

}  // namespace esnet

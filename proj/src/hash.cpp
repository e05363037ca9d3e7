#include "esnet/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <sstream>

#include "esnet/errors.hpp"

namespace esnet {

namespace {

std::array<unsigned char, 32> digest(std::string_view bytes) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::Data, "HashFailure", "SHA-256 computation failed");
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (const auto b : digest(bytes)) {
    hex.push_back(kHex[b >> 4]);
    hex.push_back(kHex[b & 0xf]);
  }
  return hex;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("MissingInput", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::uint64_t hash64(std::string_view bytes) {
  const auto d = digest(bytes);
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h = (h << 8) | d[i];
  return h;
}

}  // namespace esnet

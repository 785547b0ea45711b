#pragma once

#include <cstdint>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "wrel/common.hpp"

namespace wrel {

/// Incremental SHA-256, hex-encoded on finish().
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw RuntimeError("sha256 initialization failed");
  }

  Sha256& update(const void* data, std::size_t size) {
    EVP_DigestUpdate(ctx_.get(), data, size);
    return *this;
  }
  Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
  template <typename T>
  Sha256& update(std::span<const T> values) {
    return update(values.data(), values.size_bytes());
  }

  std::string finish() {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), out, &len);
    std::string hex;
    char buf[3];
    for (unsigned i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", out[i]);
      hex += buf;
    }
    return hex;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256(std::string_view s) { return Sha256().update(s).finish(); }

}  // namespace wrel

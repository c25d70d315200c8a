#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>

namespace eplap::detail {

/// Incremental 64-bit FNV-1a. Not cryptographic; used for cache pairing and
/// corruption detection only.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
  }

  void update_u64(std::uint64_t v) { update(&v, sizeof v); }

  void update_double(double v) { update_u64(std::bit_cast<std::uint64_t>(v)); }

  void update_string(const std::string& s) { update(s.data(), s.size()); }

  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);

}  // namespace eplap::detail

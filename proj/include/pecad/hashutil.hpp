#ifndef PECAD_HASHUTIL_HPP_
#define PECAD_HASHUTIL_HPP_

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace pecad {

/// 64-bit FNV-1a. Used for config hashes and checkpoint digests; these are
/// integrity/reproducibility fingerprints, not security primitives.
inline uint64_t fnv1a64(const void* bytes, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string hash_hex(const std::string& s) { return to_hex(fnv1a64(s)); }

}  // namespace pecad

#endif  // PECAD_HASHUTIL_HPP_

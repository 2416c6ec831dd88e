#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace codeclm {

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;

// ----------------------------- errors -----------------------------
// One exception type per contract failure; the CLI maps them to exit codes.

struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct MalformedStream : std::runtime_error { using std::runtime_error::runtime_error; };
struct UnsupportedStream : std::runtime_error { using std::runtime_error::runtime_error; };
struct UnrecoverableStream : std::runtime_error { using std::runtime_error::runtime_error; };
struct CorpusTooSmall : std::runtime_error { using std::runtime_error::runtime_error; };
struct EmptyCorpus : std::runtime_error { using std::runtime_error::runtime_error; };
struct InvalidTokenId : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ContextOverflow : std::runtime_error { using std::runtime_error::runtime_error; };
struct NonFiniteLoss : std::runtime_error { using std::runtime_error::runtime_error; };
struct VocabMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct DimensionMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };

// ----------------------------- hashing -----------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }
inline std::uint64_t fnv1a64(const Bytes& b) { return fnv1a64(b.data(), b.size()); }

std::string hex_u64(std::uint64_t v);
std::uint64_t parse_hex_u64(const std::string& s);

// ----------------------------- file io -----------------------------

Bytes read_file(const std::string& path);
void write_file(const std::string& path, ByteSpan data);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// Deterministic splitmix64, used to derive stream seeds from (seed, index).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace codeclm

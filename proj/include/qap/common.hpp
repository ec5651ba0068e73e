#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qap {

// Error taxonomy shared by every module. Callers that need to map failures
// onto process exit codes (the CLI) or onto classified test expectations
// catch these by type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A structurally valid input whose content makes the operation meaningless
// (zero-norm vector, zero-variance judgments, ...).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  long line() const { return line_; }

 private:
  long line_ = 0;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class StaleArtifact : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

// FNV-1a, 64-bit. Used for content hashes (cache keys, checkpoints,
// manifests) and for deriving per-item RNG seeds.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv1a(bytes, 8, h);
}

// Stable per-item seed: hash(seed, tag). Keeps parallel fan-out (and any
// reordering of work) reproducible.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return fnv1a(tag, fnv1a_u64(seed));
}

std::string to_hex(std::uint64_t v);

}  // namespace qap

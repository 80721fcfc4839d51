#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace roadmap {

// Base of every error the library raises. Callers that only care about
// "something in the study inputs is wrong" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (DAG DSL, DGP DSL, config). Carries a 1-based position.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line, int column)
      : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

// Well-formed input that violates a domain rule (cycle, non-binary
// treatment, unidentified estimand, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// logit(0) = -inf and logit(1) = +inf on purpose; callers that feed these
// into expit(offset + eps * h) get back exactly 0 or 1.
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clamp_probability(double p, double lo, double hi) {
  return p < lo ? lo : (p > hi ? hi : p);
}

inline constexpr double kZ975 = 1.959963984540054;

// SplitMix64 finalizer; used to derive independent stream seeds from
// (master seed, counter) pairs.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                           std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(master) ^ stream) ^ (index * 0xd1b54a32d192ed03ULL));
}

// Maps the top 53 bits of a 64-bit draw onto [0, 1).
inline constexpr double unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace roadmap

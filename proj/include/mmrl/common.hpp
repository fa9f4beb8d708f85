#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mmrl {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Process exit codes used by the CLI.
enum class ExitCode : int { ok = 0, usage = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(std::string what, ExitCode code) : std::runtime_error(std::move(what)), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

struct InvalidInput : Error {
  explicit InvalidInput(const std::string& w) : Error("invalid input: " + w, ExitCode::data) {}
};
struct InsufficientData : Error {
  explicit InsufficientData(const std::string& w) : Error("insufficient data: " + w, ExitCode::data) {}
};
struct NoValidCandidate : Error {
  explicit NoValidCandidate(const std::string& w) : Error("no valid candidate: " + w, ExitCode::data) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("configuration error: " + w, ExitCode::usage) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error("parse error: " + w, ExitCode::data) {}
};
struct DecodeError : Error {
  explicit DecodeError(const std::string& w) : Error("decode error: " + w, ExitCode::data) {}
};
struct LookupError : Error {
  explicit LookupError(const std::string& w) : Error("lookup error: " + w, ExitCode::data) {}
};
struct DegenerateEmbedding : Error {
  explicit DegenerateEmbedding(const std::string& w)
      : Error("degenerate embedding: " + w, ExitCode::numeric) {}
};
struct NumericFailure : Error {
  explicit NumericFailure(const std::string& w) : Error("numeric failure: " + w, ExitCode::numeric) {}
};

/// Derives an independent 64-bit stream seed from a base seed and a key
/// (splitmix64 finalizer over the combined value).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (key + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_string(const std::string& s);

}  // namespace mmrl

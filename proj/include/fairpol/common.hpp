#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace fairpol {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// API misuse, e.g. backward() without a cached train-mode forward.
struct UsageError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Non-finite value detected; carries the flat parameter/sample index.
struct NumericError : Error {
  NumericError(const std::string& msg, std::ptrdiff_t index)
      : Error(msg + " (index " + std::to_string(index) + ")"), index(index) {}
  std::ptrdiff_t index;
};

struct ParseError : Error {
  ParseError(const std::string& msg, long row, const std::string& column)
      : Error(msg + " (row " + std::to_string(row) + ", column " + column + ")"),
        row(row),
        column(column) {}
  long row;
  std::string column;
};

struct TrainingError : Error {
  TrainingError(const std::string& msg, int epoch)
      : Error(msg + " (epoch " + std::to_string(epoch) + ")"), epoch(epoch) {}
  int epoch;
};

struct EstimationError : Error {
  using Error::Error;
};

// Theorem precondition l(n,p2)/sqrt(n) < nu violated.
struct BoundInapplicableError : Error {
  BoundInapplicableError(const std::string& msg, double ell, double nu)
      : Error(msg + " (l(n,p2)=" + std::to_string(ell) + ", nu=" + std::to_string(nu) + ")"),
        ell(ell),
        nu(nu) {}
  double ell;
  double nu;
};

using Rng = std::mt19937_64;

// SplitMix64 step. Used to derive independent per-stage seeds from one master
// seed so that unrelated stages never share a random stream.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t state = master ^ (0xd1b54a32d192ed03ULL * (stream + 1));
  return splitmix64(state);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace fairpol

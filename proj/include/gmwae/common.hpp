#pragma once

#include <random>
#include <stdexcept>
#include <string>

namespace gmwae {

using Rng = std::mt19937_64;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape / index problems in library calls.
struct DimensionError : Error {
  using Error::Error;
};

// Anything wrong with dataset files or their contents.
struct DataError : Error {
  using Error::Error;
};
struct BadMagicError : DataError {
  using DataError::DataError;
};
struct TruncatedFileError : DataError {
  using DataError::DataError;
};
struct CountMismatchError : DataError {
  using DataError::DataError;
};

// KL(q || p) with q-mass where p has none.
struct InfiniteDivergenceError : Error {
  using Error::Error;
};

// Training hit a non-finite loss; carries the path of the diagnostic dump.
struct NumericalAbort : Error {
  using Error::Error;
};

// Mix a seed with a stream index (epoch, purpose tag, ...) into a fresh
// generator seed. splitmix64 finalizer.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace gmwae

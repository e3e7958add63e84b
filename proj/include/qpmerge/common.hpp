#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qpmerge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes that do not chain, or vectors of the wrong length.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A parameter outside its documented domain (bounds, probabilities, indices).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Non-finite values or a numerical routine that could not produce a result.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed or incompatible bundle file. The message starts with the field path.
class ParseError : public Error {
public:
    using Error::Error;
};

// splitmix64 finaliser; used to derive independent per-consumer seeds from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace qpmerge

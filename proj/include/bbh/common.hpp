#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bbh {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A precondition of an operation was violated.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Out-of-range index (e.g. class label outside [0, C)).
class IndexError : public Error {
public:
    using Error::Error;
};

/// A forward operation produced NaN/Inf from finite inputs.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed file content (IDX, checkpoint).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Filesystem access failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Training aborted (NaN loss, bad dispatch).
class TrainError : public Error {
public:
    using Error::Error;
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, T&& v, Rest&&... rest) {
    os << std::forward<T>(v);
    msg_append(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Parts>
std::string msg(Parts&&... parts) {
    std::ostringstream os;
    detail::msg_append(os, std::forward<Parts>(parts)...);
    return os.str();
}

using Rng = std::mt19937_64;

/// Standard normal draw. A fresh distribution per call keeps the stream
/// independent of any cached state inside std::normal_distribution.
inline double gauss(Rng& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

/// Deterministic child stream for (seed, salt) pairs.
inline Rng make_rng(std::uint64_t seed, std::uint64_t salt = 0) {
    std::seed_seq seq{
        static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
        static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
    return Rng(seq);
}

}  // namespace bbh

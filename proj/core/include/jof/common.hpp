#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace jof {

// Error taxonomy, mirrored by the CLI exit codes (see tools/).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad arguments, dimension mismatches, contract violations by the caller.
struct UsageError : Error {
    using Error::Error;
};

// File and format problems (missing files, bad magic, truncated payloads).
struct IoError : Error {
    using Error::Error;
};

// Numerical failure: divergence, non-finite values where finite required.
struct NumericError : Error {
    using Error::Error;
};

// A verification run (gradcheck, invariant replay) found a violation.
struct CheckError : Error {
    using Error::Error;
};

inline bool is_finite(double v) { return std::isfinite(v); }

template <typename Derived>
bool all_finite(const Derived& m) {
    return m.allFinite();
}

} // namespace jof

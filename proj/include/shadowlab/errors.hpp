#pragma once

#include <stdexcept>
#include <string>

namespace shadowlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A state left the declared chart (norm above the divergence bound).
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double time)
        : Error(what), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

/// Input violates an operation's precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// A regular point was required but the field vanishes there.
class SingularityError : public Error {
public:
    using Error::Error;
};

/// Iterative method failed (singular Jacobian, iteration cap, no crossing).
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// No usable gap between the candidate stable and unstable bundles.
class GapError : public Error {
public:
    using Error::Error;
};

/// Malformed or out-of-range experiment configuration; line 0 when the
/// problem is not tied to one line.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

} // namespace shadowlab

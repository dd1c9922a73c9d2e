#pragma once

#include <stdexcept>
#include <string>

namespace dsu {

/// Shape or axis mismatch between operands.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Numerical-domain violation (division below the safeguard floor,
/// non-finite values escaping an operation, degenerate reductions).
class NumericalError : public std::domain_error {
public:
    explicit NumericalError(const std::string& msg) : std::domain_error(msg) {}
};

/// Invalid configuration value or malformed config document.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem / serialization failure.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace dsu

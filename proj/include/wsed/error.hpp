#ifndef WSED_ERROR_HPP
#define WSED_ERROR_HPP

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsed {

/// Base class for all toolkit errors. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad RIFF header, truncated checkpoint, ...).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Recognized but unsupported input (e.g. compressed WAV codecs).
class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Incompatible tensor/matrix shapes. Messages always report both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A caller violated an operation precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or unresolvable path in a run config.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad manifest/corpus data (duplicate ids, missing columns, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// Training aborted (non-finite loss, degenerate sampler input, ...).
class TrainError : public Error {
public:
    using Error::Error;
};

inline std::string shape_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

} // namespace wsed

#endif

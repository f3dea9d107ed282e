#pragma once

#include <stdexcept>
#include <string>

namespace dipstop {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Image dimensions outside the supported range.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of the operation (negative sigma, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (architecture spec, run config, config file).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// The requested computation is not supported by the supplied object.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// Invalid argument that is neither a shape nor a domain problem.
class ArgumentError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace dipstop

#pragma once

#include <stdexcept>
#include <string>

namespace angiodit {

// Exit-code-bearing error families. The CLI maps each to a process status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor geometry or argument precondition violated.
class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// NaN/Inf observed where only finite values are allowed.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace angiodit

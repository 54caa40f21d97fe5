#pragma once

#include <stdexcept>
#include <string>

namespace doc {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidParameterError : Error {
    using Error::Error;
};

struct LayoutError : Error {
    using Error::Error;
};

struct PolicyError : Error {
    using Error::Error;
};

struct EnumerationTooLargeError : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct TypeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct DivergenceError : Error {
    DivergenceError(const std::string& msg, long step_) : Error(msg), step(step_) {}
    long step;
};

}  // namespace doc

#pragma once

#include <stdexcept>
#include <string>

namespace lpr {

// Operand shapes do not conform; the message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A scalar argument lies outside its documented domain.
class ParamError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Undefined numerical input or a non-finite intermediate value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training aborted; the message carries the step index.
class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Config file problems (syntax or semantic). The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace lpr

#pragma once

#include <stdexcept>
#include <string>

namespace gradbench {

// Incompatible tensor shapes; the message names the shapes involved.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid argument values: out-of-range labels, unknown identifiers, bad hyperparameters.
class ValueError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A forward computation produced NaN or Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or truncated input files (checkpoints, images, manifests, configs).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing, unreadable or unwritable paths.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gradbench

#pragma once

#include <stdexcept>
#include <string>

namespace collab {

// Raised for invalid arguments and violated preconditions inside a stage.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when an input file or command-line value is unusable. The CLI maps
// this to exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

}  // namespace collab

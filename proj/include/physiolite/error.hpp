#pragma once

#include <stdexcept>
#include <string>

namespace physiolite {

// Raised for anything traceable to user-supplied data: malformed files,
// shape mismatches, out-of-range parameters. The CLI maps these to exit
// code 2; every other exception is an internal error (exit 3).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace physiolite

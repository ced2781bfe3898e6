#pragma once

#include <stdexcept>

namespace emoc {

// Non-finite losses/gradients and divergence aborts. The CLI maps this to a
// distinct exit code from usage/input errors.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace emoc

#pragma once

#include <stdexcept>
#include <string>

namespace vdmood {

// Error taxonomy mirrored by the CLI exit codes: usage 1, data 2, numerical 3.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vdmood

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace umurl {

// Error taxonomy. The C API maps these 1:1 onto status codes and the CLI
// onto exit codes: contract/usage -> 1, data format -> 2, numeric -> 3.

// Precondition or API misuse by the caller.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Bad command, bad option value, mismatched configuration.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or truncated binary input; carries the byte offset of the
// first inconsistency.
class DataFormatError : public std::runtime_error {
public:
    DataFormatError(const std::string& msg, std::uint64_t offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_;
};

// NaN/Inf produced by a kernel operation, or a degenerate value (zero-norm
// embedding) where finite arithmetic is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const char* msg) {
    if (!cond) {
        throw ContractError(msg);
    }
}

}  // namespace umurl

#pragma once

#include <stdexcept>
#include <string>

namespace steglab {

// Precondition / shape-contract violation. The message names the offending
// dimension or argument.
struct ContractError : std::invalid_argument {
    explicit ContractError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed input file. Carries the byte offset where parsing stopped.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::size_t byte_offset;
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Linear-algebra or other numeric failure that survived regularization.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training loss turns non-finite.
struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& msg, long long iter)
        : std::runtime_error(msg + " at iteration " + std::to_string(iter)),
          iteration(iter) {}
    long long iteration;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

}  // namespace steglab

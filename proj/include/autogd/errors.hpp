#pragma once

#include <stdexcept>
#include <string>

namespace autogd {

/// Raised when a caller violates a documented precondition (bad config,
/// dimension mismatch, unknown id).
class UsageError : public std::invalid_argument {
public:
    explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an optimizer is handed a state it cannot continue from,
/// e.g. an iterate with NaN/Inf entries.
class CorruptedStateError : public std::runtime_error {
public:
    explicit CorruptedStateError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace autogd

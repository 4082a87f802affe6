#pragma once

#include <stdexcept>
#include <string>

namespace dpr {

// Bad or inconsistent input data (malformed files, invalid ids, shape
// mismatches caused by caller input). Maps to CLI exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Violation of an internal contract (divergence, non-finite loss, broken
// artifact). Maps to CLI exit code 3.
class InternalError : public std::runtime_error {
public:
    explicit InternalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dpr

#pragma once

#include <stdexcept>
#include <string>

namespace forvalue {

/// Malformed or inconsistent input data (bad dimensions, corrupted values).
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem-level failure: missing, unreadable or truncated files.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller asked for something that does not exist (unknown id, empty set).
class lookup_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace forvalue

#pragma once

#include <stdexcept>
#include <string>

namespace cb {

/// Base error for the library. `kind` maps onto the C API error codes.
class Error : public std::runtime_error {
public:
    enum class Kind { Usage, Data, Numeric, Internal };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Bad arguments, unknown keys, precondition violations by the caller.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(Kind::Usage, what) {}
};

/// Malformed or missing input files and data.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(Kind::Data, what) {}
};

/// NaN/Inf produced during a forward or backward pass.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(Kind::Numeric, what) {}
};

/// Throws the subclass matching `kind`, so callers can still catch by type.
[[noreturn]] inline void throw_error(Error::Kind kind, const std::string& what) {
    switch (kind) {
        case Error::Kind::Usage: throw UsageError(what);
        case Error::Kind::Data: throw DataError(what);
        case Error::Kind::Numeric: throw NumericError(what);
        case Error::Kind::Internal: break;
    }
    throw Error(Error::Kind::Internal, what);
}

}  // namespace cb

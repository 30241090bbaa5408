#pragma once

#include <stdexcept>
#include <string>

namespace pfssl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct ConsistencyError : Error {
    using Error::Error;
};

struct PartitionError : Error {
    using Error::Error;
};

struct ProtocolError : Error {
    using Error::Error;
};

// Names the offending config field so the CLI can report it verbatim.
struct ConfigError : Error {
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace pfssl

#pragma once

#include <stdexcept>
#include <string>

namespace migcast {

// Exit-code families used by the CLI.
enum class ErrorKind { Usage = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define MIGCAST_DEFINE_ERROR(Name, Kind)                                                       \
    class Name : public Error {                                                                \
    public:                                                                                    \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, #Name ": " + what) {} \
    };

MIGCAST_DEFINE_ERROR(ParseError, Data)
MIGCAST_DEFINE_ERROR(GapError, Data)
MIGCAST_DEFINE_ERROR(ValueError, Data)
MIGCAST_DEFINE_ERROR(RangeError, Data)
MIGCAST_DEFINE_ERROR(FitError, Data)
MIGCAST_DEFINE_ERROR(ShapeError, Numeric)
MIGCAST_DEFINE_ERROR(DegenerateDenominator, Numeric)
MIGCAST_DEFINE_ERROR(InconsistentEvidence, Numeric)
MIGCAST_DEFINE_ERROR(ConfigError, Usage)
MIGCAST_DEFINE_ERROR(ModeError, Usage)

#undef MIGCAST_DEFINE_ERROR

}  // namespace migcast

#pragma once

#include <stdexcept>
#include <string>

namespace rubslam {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RankDeficient : Error {
    using Error::Error;
};
struct DimensionMismatch : Error {
    using Error::Error;
};
struct SingularPivot : Error {
    using Error::Error;
};
struct InvalidArgument : Error {
    using Error::Error;
};
struct MissingKey : Error {
    using Error::Error;
};
struct DegenerateGeometry : Error {
    using Error::Error;
};
struct TimestampMismatch : Error {
    using Error::Error;
};
struct UnknownVariable : Error {
    using Error::Error;
};
struct SeparatorUnresolvable : Error {
    using Error::Error;
};
struct Diverged : Error {
    using Error::Error;
};
struct NoCandidates : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};

}  // namespace rubslam

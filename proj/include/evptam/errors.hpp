#ifndef EVPTAM_ERRORS_HPP
#define EVPTAM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace evptam {

// Base for all typed pipeline errors. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};

// geometry
struct NonPositiveDepth : Error {
  using Error::Error;
};
struct DegenerateRays : Error {
  using Error::Error;
};

// event pipeline
struct NonMonotonicTimestamps : Error {
  using Error::Error;
};
struct StreamExhausted : Error {
  using Error::Error;
};

// fusion / matching
struct InsufficientMatches : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct DetectorFailure : Error {
  using Error::Error;
};

// solver
struct SingularNormalEquations : Error {
  using Error::Error;
};
struct NonFiniteResidual : Error {
  using Error::Error;
};

// tracking
struct DivergedPose : Error {
  using Error::Error;
};

// loop closure
struct NoFeatures : Error {
  using Error::Error;
};

// io / evaluation
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_number(line) {}
  std::size_t line_number;
};
struct NoAssociations : Error {
  using Error::Error;
};
struct DegenerateConfiguration : Error {
  using Error::Error;
};

}  // namespace evptam

#endif  // EVPTAM_ERRORS_HPP

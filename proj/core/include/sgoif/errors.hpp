#ifndef SGOIF_ERRORS_HPP
#define SGOIF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sgoif {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

struct NotPositiveDefinite : Error {
  using Error::Error;
};

struct NotSymmetric : Error {
  using Error::Error;
};

struct NotFinite : Error {
  using Error::Error;
};

struct InfeasibleNoise : Error {
  using Error::Error;
};

struct BackendMismatch : Error {
  using Error::Error;
};

struct SingularPreconditioner : Error {
  using Error::Error;
};

struct DivergentSeries : Error {
  using Error::Error;
};

struct SingularProjectedSystem : Error {
  using Error::Error;
};

struct AllAnchorsZero : Error {
  using Error::Error;
};

struct SingularGram : Error {
  using Error::Error;
};

struct InsufficientProbes : Error {
  using Error::Error;
};

struct ConfigInvalid : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace sgoif

#endif

#pragma once

#include <stdexcept>
#include <string>

namespace tdvio {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TDVIO_DEFINE_ERROR(Name, Base)        \
  class Name : public Base {                  \
   public:                                    \
    using Base::Base;                         \
  }

TDVIO_DEFINE_ERROR(InvalidArgument, Error);

// IMU
TDVIO_DEFINE_ERROR(SensorGap, Error);
TDVIO_DEFINE_ERROR(RelinearizationRequired, Error);

// Visual factors. These are evaluation failures: the solver drops the
// offending factor and counts it.
TDVIO_DEFINE_ERROR(FactorEvaluationError, Error);
TDVIO_DEFINE_ERROR(BehindCamera, FactorEvaluationError);
TDVIO_DEFINE_ERROR(DegenerateDepth, FactorEvaluationError);
TDVIO_DEFINE_ERROR(OffsetOutOfRange, FactorEvaluationError);

// Solver
TDVIO_DEFINE_ERROR(SolverDiverged, Error);
TDVIO_DEFINE_ERROR(SingularBlock, Error);

// Estimator
TDVIO_DEFINE_ERROR(NonMonotonicTimestamp, Error);
TDVIO_DEFINE_ERROR(InsufficientImu, Error);
TDVIO_DEFINE_ERROR(InitializationPending, Error);
TDVIO_DEFINE_ERROR(EstimatorDiverged, Error);

// Simulation and evaluation
TDVIO_DEFINE_ERROR(OutOfRange, Error);
TDVIO_DEFINE_ERROR(ScenarioError, Error);
TDVIO_DEFINE_ERROR(InsufficientOverlap, Error);
TDVIO_DEFINE_ERROR(DataError, Error);
TDVIO_DEFINE_ERROR(IoError, Error);

#undef TDVIO_DEFINE_ERROR

}  // namespace tdvio

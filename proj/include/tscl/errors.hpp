#pragma once

#include <stdexcept>
#include <string>

namespace tscl {

#define TSCL_DEFINE_ERROR(Name)                                  \
  struct Name : std::runtime_error {                             \
    explicit Name(const std::string& what)                       \
        : std::runtime_error(std::string(#Name ": ") + what) {}  \
  }

// data
TSCL_DEFINE_ERROR(MalformedFile);
TSCL_DEFINE_ERROR(NonMonotonicTimestamps);
TSCL_DEFINE_ERROR(EmptySeries);
TSCL_DEFINE_ERROR(IrregularSampling);
TSCL_DEFINE_ERROR(SplitTooSmall);
TSCL_DEFINE_ERROR(SeriesTooShort);

// backbone
TSCL_DEFINE_ERROR(InvalidSpec);
TSCL_DEFINE_ERROR(ShapeMismatch);

// augment
TSCL_DEFINE_ERROR(SegmentTooShort);

// loss
TSCL_DEFINE_ERROR(ZeroVector);
TSCL_DEFINE_ERROR(NonPositiveTemperature);
TSCL_DEFINE_ERROR(EmptyQueueWithoutWarmup);

// strategy
TSCL_DEFINE_ERROR(Divergence);
TSCL_DEFINE_ERROR(SingularSystem);
TSCL_DEFINE_ERROR(CheckpointMismatch);

// eval / cli
TSCL_DEFINE_ERROR(MissingCell);
TSCL_DEFINE_ERROR(ConfigError);
TSCL_DEFINE_ERROR(ConflictingCells);
TSCL_DEFINE_ERROR(IoError);
TSCL_DEFINE_ERROR(MissingData);

#undef TSCL_DEFINE_ERROR

}  // namespace tscl

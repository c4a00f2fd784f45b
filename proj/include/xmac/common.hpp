#pragma once

#include <stdexcept>
#include <string>

namespace xmac {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension/shape disagreements between operands.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid model/training/synth configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem and raster I/O failures.
struct IoError : Error {
  using Error::Error;
};

// Malformed serialized data (checkpoint, PNG, JSON).
struct ParseError : Error {
  using Error::Error;
};

enum class Mode { kTrain, kInfer };

// Number of threads internal kernels may use. Reads XMAC_THREADS once;
// defaults to 1 so results are bit-reproducible out of the box. Kernels
// only parallelize over disjoint output slices, so any value still gives
// identical results for identical inputs.
int thread_count();

}  // namespace xmac

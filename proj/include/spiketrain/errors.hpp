#pragma once

#include <stdexcept>
#include <string>

namespace spiketrain {

// Base of every error this library throws on its own behalf.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor extents do not line up (matmul inner dims, conv channels, ...).
struct ShapeError : Error {
  using Error::Error;
};

// A caller-supplied value violates a precondition (bad range, k <= 0, ...).
struct ArgumentError : Error {
  using Error::Error;
};

// A function pair or data value breaks a structural contract
// (custom-gradient shape mismatch, non-binary spike input, non-scalar loss).
struct ContractError : Error {
  using Error::Error;
};

// An object was used after it was consumed (backward on a spent tape).
struct StateError : Error {
  using Error::Error;
};

// A byte stream is not a valid container/checkpoint/graph file.
// Messages include the byte offset where decoding failed.
struct FormatError : Error {
  using Error::Error;
};

// Filesystem trouble: path missing, unwritable, short write.
struct IoError : Error {
  using Error::Error;
};

// A layer pipeline does not chain (inconsistent shapes, missing readout).
struct SpecError : Error {
  using Error::Error;
};

// Config file problems; messages carry the line number.
struct ConfigError : Error {
  using Error::Error;
};

// Interchange graph with a topology or node kind we cannot represent.
struct UnsupportedError : Error {
  using Error::Error;
};

// No finite continuous-time equivalent under the discretization map
// (beta = 1 on export, dt > tau on import).
struct DiscretizationError : Error {
  using Error::Error;
};

}  // namespace spiketrain

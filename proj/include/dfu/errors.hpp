#pragma once

#include <stdexcept>
#include <string>

namespace dfu {

// Invalid configuration: unknown keys, bad values, inconsistent specs.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised while a graph is being assembled, names the offending node.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input resolution not admissible for an operator or model.
struct ResolutionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A formula evaluated at a point where it is singular (t = 0, sigma = 0).
struct SingularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// More Karhunen-Loeve terms requested than the grid can represent.
struct TruncationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dfu

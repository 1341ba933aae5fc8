#pragma once

#include <stdexcept>
#include <string>

namespace less {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or channel counts.
struct DimensionError : Error {
    using Error::Error;
};

// A precondition on the caller's input was violated.
struct ContractError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// Input that cannot flow through the network (e.g. a stage with no voxels).
struct DegenerateInputError : Error {
    using Error::Error;
};

struct LabelError : Error {
    using Error::Error;
};

struct GenerationError : Error {
    using Error::Error;
};

// Non-finite values reached the optimizer or a loss.
struct TrainingError : Error {
    using Error::Error;
};

// Non-finite values produced by a forward pass; message names the module.
struct ModelError : Error {
    using Error::Error;
};

// Malformed file or config.
struct FormatError : Error {
    using Error::Error;
};

}  // namespace less

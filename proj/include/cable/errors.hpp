#pragma once

#include <stdexcept>
#include <string>

namespace cable {

// Shape/dimension disagreement between operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf where the contract requires finite values, or a degenerate
// reduction (e.g. fully masked softmax row).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range id (vocabulary, position table, bucket).
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller passed an unusable value (empty prompt, bad length list, ...).
struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Streaming cache grew past its configured capacity.
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad or unknown configuration key/value. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File system / serialization failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint path does not exist or is not a checkpoint. CLI exit code 3.
struct CheckpointMissingError : IoError {
    using IoError::IoError;
};

// Corpus ingestion failure (empty file, invalid UTF-8, unknown symbol).
struct IngestionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training loop hit a non-finite loss or gradient and stopped.
struct TrainAbortError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace cable

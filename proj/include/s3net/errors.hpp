#pragma once

#include <stdexcept>
#include <string>

namespace s3net {

// Error taxonomy shared across the library. The CLI maps these onto its
// exit-code contract (config -> 2, data/io -> 3, shape/dimension -> 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mismatched tensor shapes between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A size or divisibility constraint on a single tensor was violated.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or inconsistent configuration combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset ingestion or sampling problem (bad filename, missing rendering).
class DataError : public Error {
public:
    using Error::Error;
};

// File decode/encode or filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

// Training aborted (non-finite loss, unusable state).
class TrainError : public Error {
public:
    using Error::Error;
};

} // namespace s3net

#pragma once

#include <stdexcept>
#include <string>

namespace kdrank {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between tensors, layers or batches.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf showed up in activations, losses or gradients.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class StoreError : public Error {
 public:
  using Error::Error;
};

// Checksum or structural failure when decoding an on-disk file.
class CorruptionError : public StoreError {
 public:
  using StoreError::StoreError;
};

// Another writer holds the label store lock.
class LockError : public StoreError {
 public:
  using StoreError::StoreError;
};

}  // namespace kdrank

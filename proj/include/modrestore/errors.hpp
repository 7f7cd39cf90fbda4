#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace modrestore {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Degradation level outside its valid range (blur r in [0,4], sigma in [0,50]).
class InvalidDegradation : public Error {
 public:
  using Error::Error;
};

/// Condition vector component outside [0,1].
class InvalidCondition : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input data that cannot be used (image too small, unreadable file, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class ImageDecodeError : public DataError {
 public:
  using DataError::DataError;
};

/// Two parameter trees (or checkpoints) whose manifests disagree.
class CheckpointIncompatible : public Error {
 public:
  CheckpointIncompatible(const std::string& what, std::vector<std::string> keys)
      : Error(what), keys_(std::move(keys)) {}

  const std::vector<std::string>& keys() const noexcept { return keys_; }

 private:
  std::vector<std::string> keys_;
};

/// Malformed or unsupported checkpoint file.
class CheckpointFormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or parameter.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace modrestore

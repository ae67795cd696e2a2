#pragma once

#include <stdexcept>
#include <string>

namespace falcon {

enum class ErrorKind {
  ShapeMismatch,
  BothEmpty,
  EmptySet,
  EmptyBatch,
  EmptySupport,
  InvalidArgument,
  InsufficientSamples,
  InsufficientUnlabeled,
  NoLabeledQuery,
  InsufficientSlices,
  MissingFile,
  CorruptImage,
  MaskShapeMismatch,
  MissingGroundTruth,
  IncompatibleVersion,
  ConfigMismatch,
  UnknownConfigKey,
  IoError,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BothEmpty: return "BothEmpty";
    case ErrorKind::EmptySet: return "EmptySet";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::EmptySupport: return "EmptySupport";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::InsufficientUnlabeled: return "InsufficientUnlabeled";
    case ErrorKind::NoLabeledQuery: return "NoLabeledQuery";
    case ErrorKind::InsufficientSlices: return "InsufficientSlices";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::CorruptImage: return "CorruptImage";
    case ErrorKind::MaskShapeMismatch: return "MaskShapeMismatch";
    case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorKind::IncompatibleVersion: return "IncompatibleVersion";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::UnknownConfigKey: return "UnknownConfigKey";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace falcon

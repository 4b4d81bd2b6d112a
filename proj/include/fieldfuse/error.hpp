// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fieldfuse {

enum class ErrorCode {
  IoError,
  ParseError,
  BadMagic,
  UnsupportedVersion,
  TruncatedPayload,
  UnsupportedDtype,
  ShapeMismatch,
  InvalidCloud,
  InvalidCamera,
  InvalidDepth,
  InconsistentFeatureDim,
  MissingDepth,
  InvalidArgument,
  EmptyBatch,
  NoSupervision,
  EmptyLabel,
  UnknownPrompt,
  DimMismatch,
  ZeroQuery,
  NoRegions,
  UnmappedPrompt,
  LabelOutOfRange,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library is an Error carrying a typed code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fieldfuse

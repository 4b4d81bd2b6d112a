// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/error.hpp"

#include "fieldfuse/tensor.hpp"

namespace fieldfuse {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidCloud: return "InvalidCloud";
    case ErrorCode::InvalidCamera: return "InvalidCamera";
    case ErrorCode::InvalidDepth: return "InvalidDepth";
    case ErrorCode::InconsistentFeatureDim: return "InconsistentFeatureDim";
    case ErrorCode::MissingDepth: return "MissingDepth";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::NoSupervision: return "NoSupervision";
    case ErrorCode::EmptyLabel: return "EmptyLabel";
    case ErrorCode::UnknownPrompt: return "UnknownPrompt";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ZeroQuery: return "ZeroQuery";
    case ErrorCode::NoRegions: return "NoRegions";
    case ErrorCode::UnmappedPrompt: return "UnmappedPrompt";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
  }
  return "Unknown";
}

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace fieldfuse

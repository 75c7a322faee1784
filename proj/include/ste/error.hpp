#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ste {

enum class ErrorKind {
  kFileNotFound,
  kUnsupportedFormat,
  kCorruptImage,
  kIoError,
  kInvalidQuality,
  kInvalidArgument,
  kShapeMismatch,
  kFontLoadError,
  kEmptyText,
  kRegionOutOfBounds,
  kSolverNotConverged,
  kNoFonts,
  kNoBackgrounds,
  kDegenerateRegion,
  kDegenerateConfiguration,
  kSingularSystem,
  kNonFiniteInput,
  kNoBnLayers,
  kNonFiniteLoss,
  kImageTooSmall,
  kParseError,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ste

#pragma once

#include <stdexcept>
#include <string>

namespace pmsfm {

// Base class for all library errors. Callers that only care about success
// or failure can catch this; the CLI maps it to a data-error exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PMSFM_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

PMSFM_DEFINE_ERROR(DegenerateInput);
PMSFM_DEFINE_ERROR(ShapeMismatch);
PMSFM_DEFINE_ERROR(ZeroEmbedding);
PMSFM_DEFINE_ERROR(FormatError);
PMSFM_DEFINE_ERROR(MissingEdge);
PMSFM_DEFINE_ERROR(InsufficientPoints);
PMSFM_DEFINE_ERROR(NoPositiveDepth);
PMSFM_DEFINE_ERROR(InsufficientPoses);
PMSFM_DEFINE_ERROR(EmptyCloud);
PMSFM_DEFINE_ERROR(InvalidArgument);

#undef PMSFM_DEFINE_ERROR

}  // namespace pmsfm

#pragma once

#include <stdexcept>
#include <string>

namespace toklab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define TOKLAB_DEFINE_ERROR(Name)            \
  struct Name : Error {                      \
    using Error::Error;                      \
  }

TOKLAB_DEFINE_ERROR(AmbiguousSubstitution);
TOKLAB_DEFINE_ERROR(EmptyCorpus);
TOKLAB_DEFINE_ERROR(VocabBudgetTooSmall);
TOKLAB_DEFINE_ERROR(InvalidStats);
TOKLAB_DEFINE_ERROR(NoPairs);
TOKLAB_DEFINE_ERROR(UnknownId);
TOKLAB_DEFINE_ERROR(InconsistentSegmentation);
TOKLAB_DEFINE_ERROR(MarkerCollision);
TOKLAB_DEFINE_ERROR(ShapeMismatch);
TOKLAB_DEFINE_ERROR(InvalidProbability);
TOKLAB_DEFINE_ERROR(NonFiniteLoss);
TOKLAB_DEFINE_ERROR(EmptySequence);
TOKLAB_DEFINE_ERROR(LengthMismatch);
TOKLAB_DEFINE_ERROR(DimMismatch);
TOKLAB_DEFINE_ERROR(BaselineMissing);
TOKLAB_DEFINE_ERROR(IOFailure);
TOKLAB_DEFINE_ERROR(ConfigInvalid);
TOKLAB_DEFINE_ERROR(ParseError);
TOKLAB_DEFINE_ERROR(StageFailure);

#undef TOKLAB_DEFINE_ERROR

}  // namespace toklab

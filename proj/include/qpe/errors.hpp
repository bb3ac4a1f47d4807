#pragma once
#include <stdexcept>
#include <string>

namespace qpe {

// All failure modes throw a named subclass of std::runtime_error so callers
// (and the CLI) can map them to stage diagnostics without string matching.
#define QPE_DEFINE_ERROR(Name)                          \
    struct Name : std::runtime_error {                  \
        explicit Name(const std::string& msg)           \
            : std::runtime_error(#Name ": " + msg) {}   \
    }

QPE_DEFINE_ERROR(BracketError);
QPE_DEFINE_ERROR(ShapeError);
QPE_DEFINE_ERROR(SingularJetError);
QPE_DEFINE_ERROR(NonFiniteStateError);
QPE_DEFINE_ERROR(DegenerateAnchorError);
QPE_DEFINE_ERROR(SingularPointError);
QPE_DEFINE_ERROR(NormalizationError);
QPE_DEFINE_ERROR(SpectralCountError);
QPE_DEFINE_ERROR(FixedPointError);
QPE_DEFINE_ERROR(RootCountError);
QPE_DEFINE_ERROR(SingularOperatorError);
QPE_DEFINE_ERROR(StripMonotonicityError);
QPE_DEFINE_ERROR(EtaTooLargeError);
QPE_DEFINE_ERROR(ContractionError);
QPE_DEFINE_ERROR(DomainError);
QPE_DEFINE_ERROR(StepSizeError);
QPE_DEFINE_ERROR(SmallDivisorError);
QPE_DEFINE_ERROR(StagnationError);
QPE_DEFINE_ERROR(ChartError);
QPE_DEFINE_ERROR(UsageError);

#undef QPE_DEFINE_ERROR

} // namespace qpe

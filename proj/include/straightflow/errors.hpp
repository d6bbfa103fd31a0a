#pragma once

#include <stdexcept>
#include <string>

namespace straightflow {

/// Base class for every failure the engine can diagnose. `code()` is a stable
/// machine-readable identifier that also appears in run manifests.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

#define STRAIGHTFLOW_DEFINE_ERROR(Name, code_str)                    \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& message)                        \
        : Error(code_str, std::string(code_str) + ": " + message) {} \
  }

// geometry
STRAIGHTFLOW_DEFINE_ERROR(DegenerateSample, "degenerate_sample");
STRAIGHTFLOW_DEFINE_ERROR(SelfIntersection, "self_intersection");

// fields
STRAIGHTFLOW_DEFINE_ERROR(DependentField, "dependent_field");
STRAIGHTFLOW_DEFINE_ERROR(NotGrounded, "not_grounded");
STRAIGHTFLOW_DEFINE_ERROR(AmbiguousFoot, "ambiguous_foot");
STRAIGHTFLOW_DEFINE_ERROR(AntipodalCollar, "antipodal_collar");
STRAIGHTFLOW_DEFINE_ERROR(GeneralPositionFailed, "general_position_failed");

// flow / verify
STRAIGHTFLOW_DEFINE_ERROR(WrongMode, "wrong_mode");
STRAIGHTFLOW_DEFINE_ERROR(NotConverged, "not_converged");

// compress
STRAIGHTFLOW_DEFINE_ERROR(PreconditionFailed, "precondition_failed");
STRAIGHTFLOW_DEFINE_ERROR(BudgetExceeded, "budget_exceeded");
STRAIGHTFLOW_DEFINE_ERROR(InducedNeighbourhoodClash, "induced_neighbourhood_clash");
STRAIGHTFLOW_DEFINE_ERROR(NotImplemented, "not_implemented");

// io
STRAIGHTFLOW_DEFINE_ERROR(IoError, "io_error");
STRAIGHTFLOW_DEFINE_ERROR(SchemaError, "schema_error");

#undef STRAIGHTFLOW_DEFINE_ERROR

}  // namespace straightflow

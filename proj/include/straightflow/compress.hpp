#pragma once

#include <optional>
#include <string>
#include <vector>

#include "straightflow/config.hpp"
#include "straightflow/fields.hpp"
#include "straightflow/flow.hpp"
#include "straightflow/manifold.hpp"
#include "straightflow/verify.hpp"

namespace straightflow {

enum class CompressionStatus { compressed, not_converged, precondition_failed };

std::string to_string(CompressionStatus s);

/// Scene-derived parameter values actually used by a run (config echo with
/// defaults resolved).
struct ResolvedParams {
  double epsilon = 0.0;  // measured grounding angle
  double mu = 0.0;
  double smoothing = 0.0;
  double nu = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
  double omega = 0.0;
  double step_h = 0.0;
  double t_max = 0.0;
  double epsilon_budget = 0.0;
  int refinement_round = 0;  // rounds actually spent
  int perturb_rounds = 0;
  bool immersed_owner = false;
};

struct CompressionResult {
  CompressionStatus status = CompressionStatus::precondition_failed;
  std::string error_code;  // names the refusing condition; empty on success
  std::string message;

  ResolvedParams params;
  IsotopyTrace trace;                    // main flow (first stage in local mode)
  std::optional<IsotopyTrace> residual;  // local mode: trailing global move
  std::vector<IsotopyTrace> pass_traces; // multi mode: one per straightened axis
  InvariantReport report;

  EmbeddedManifold final_manifold;
  NormalFrame final_frame;
  SubsetMarking marking;                 // local mode labels on the input samples
  DoublePointCensus census;              // projection self-crossings (curves)

  std::vector<double> sample_displacement;  // |final - initial| per sample
  double max_displacement = 0.0;

  bool ok() const { return status == CompressionStatus::compressed; }
};

/// Straighten the active field by the drift-removed flow of its ambient
/// extension: perpendicularize, ground (perturbing if the codimension
/// allows), rotate upwards, extend over the tube, integrate. Inputs that are
/// already vertical return immediately with zero displacement.
CompressionResult compress_global(const EmbeddedManifold& M,
                                  const NormalFrame& alpha,
                                  const CompressionConfig& cfg);

/// Straighten with a displacement budget: localise the field to the upmost
/// direction away from the downset neighbourhood, flow with the phase-out
/// ramp, then finish with a small residual global move. Halves (nu, delta,
/// neighbourhood widths) until the measured displacement fits the budget or
/// the refinement cap is reached.
CompressionResult compress_local(const EmbeddedManifold& M,
                                 const NormalFrame& alpha,
                                 const CompressionConfig& cfg);

/// Straighten an n-field frame axis by axis: each pass straightens one field
/// to its coordinate axis, drops that coordinate, and continues on the
/// projected object (anchored foot resolution once projections self-cross),
/// finally lifting every pass back to the full ambient space.
CompressionResult compress_multi(const EmbeddedManifold& M,
                                 const NormalFrame& frame,
                                 const CompressionConfig& cfg);

}  // namespace straightflow

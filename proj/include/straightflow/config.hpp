#pragma once

#include <cstdint>
#include <vector>

#include "straightflow/fields.hpp"

namespace straightflow {

/// Knobs for the straightening pipelines. A zero (or negative, where noted)
/// value means "derive the default from the scene", echoed back in results.
struct CompressionConfig {
  // Field shaping.
  double mu = 0.0;         // rotation margin; default: grounding angle / 4
  double smoothing = 0.0;  // rotation clamp width; default: mu / 2

  // Tubular data.
  double nu = 0.0;      // fibre radius; default: 0.9 * discrete reach
                        // (2 * max edge for immersed owners)
  double lambda = 0.0;  // intrinsic locality radius; default: 3 * max edge

  // Local (small-displacement) mode.
  double epsilon_budget = 0.0;  // required > 0 in local mode
  double delta = 0.0;           // general-position length gate; default: 5 * max edge
  MarkingConfig marking;
  int collar_cells = 1;
  int max_refinements = 4;  // halving rounds of (nu, delta, widths)

  // Flow integration.
  double step_h = 0.0;  // default: 0.2 * min(nu, min edge)
  double t_max = 0.0;   // default: 10 * height span / sin(epsilon - mu)
  double omega = -1.0;  // phased ramp start; < 0 derives it from the sheet
                        // separation over the downset, 0 disables phase-out
  double verticality_tol = 1e-3;
  int record_every = 1;

  // General position and determinism.
  std::uint64_t rng_seed = 1;
  double perturb_angle = 0.0;  // default: marking.d_tol / 2
  int max_perturb_rounds = 8;

  // Relative mode: sample ids pinned in place through every flow.
  std::vector<int> relative_region;

  // Tolerances.
  double self_intersection_tol = 0.0;  // default: 1e-7 * max edge
  double ambiguous_tol = 0.0;          // nearest-foot tie gate; 0 = derived
  double transverse_tol = 0.017;       // ~1 degree crossing-angle floor
  double proximity_tol = 0.0;          // 3d double-point threshold; 0 = nu/4
  double immersion_tol = 0.1;
  double independence_tol = 1e-6;
  double unit_tol = 1e-6;
};

}  // namespace straightflow

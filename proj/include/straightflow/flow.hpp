#pragma once

#include <string>
#include <vector>

#include "straightflow/fields.hpp"
#include "straightflow/manifold.hpp"

namespace straightflow {

enum class FlowMode { global, modified, phased };

std::string to_string(FlowMode mode);
FlowMode flow_mode_from_string(const std::string& s);

struct FlowConfig {
  double step_h = 0.0;           // fixed RK4 step, > 0
  double t_max = 0.0;            // integration horizon, > 0
  FlowMode mode = FlowMode::modified;
  double omega = 0.0;            // phase-out start; <= 0 disables the ramp
  double verticality_tol = 1e-3; // radians: convergence threshold on carried
  int record_every = 1;          // snapshot cadence in steps
};

struct Snapshot {
  double time = 0.0;
  std::vector<Vec> positions;
  std::vector<Vec> carried;       // active field re-derived along the flow
  std::vector<double> displacement;  // |x_i(t) - x_i(0)|
};

struct IsotopyTrace {
  FlowMode mode = FlowMode::modified;
  FlowConfig config;
  int vertical_index = 0;  // coordinate the flow straightens toward
  std::vector<Snapshot> snapshots;
  bool converged = false;
  double final_time = 0.0;
  double max_step_speed = 0.0;  // max |dx|/h over every step and sample

  const Snapshot& initial() const { return snapshots.front(); }
  const Snapshot& final_snapshot() const { return snapshots.back(); }
  double max_displacement() const;
  double total_displacement() const;
};

/// One RK4 step of the autonomous flow x' = field(x).
Vec step_global(const Vec& x, const AmbientField& field, double h);

/// One RK4 step at time t of the modified flow
///   x' = rho(t) * (field(x + t*u) - u),
/// where rho is the phase-out ramp (omega <= 0 keeps rho == 1).
Vec step_modified(const Vec& x, double t, const AmbientField& field, double h,
                  double omega);

/// Integrate every sample of M through the configured flow. The carried frame
/// along a modified/phased run is field(x + tau(t)*u) with tau the effective
/// flowed time (tau == t while the ramp is fully open); in global mode it is
/// field(x). Integration stops when every carried vector is within
/// verticality_tol of vertical, or at t_max.
///
/// `frozen` (optional, per-sample) pins samples in place: they are stepped as
/// if the field there were vertical. `anchored` switches foot searches to the
/// induced patch around each flowing sample (immersed owners); the field must
/// have prepared anchors.
IsotopyTrace integrate(const EmbeddedManifold& M, const AmbientField& field,
                       const FlowConfig& cfg,
                       const std::vector<char>* frozen = nullptr,
                       bool anchored = false);

/// Rebuild a manifold with the same topology as `like` at snapshot positions.
EmbeddedManifold manifold_at(const EmbeddedManifold& like, const Snapshot& snap);

}  // namespace straightflow

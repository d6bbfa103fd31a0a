#include "straightflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "straightflow/detail/smooth.hpp"
#include "straightflow/errors.hpp"

namespace straightflow {

namespace {

using detail::angle_between;
using detail::phase_out;
using detail::phase_out_integral;

template <class Field>
Vec rk4_autonomous(const Vec& x, double h, Field&& f) {
  const Vec k1 = f(x);
  const Vec k2 = f(x + (h / 2.0) * k1);
  const Vec k3 = f(x + (h / 2.0) * k2);
  const Vec k4 = f(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// x' = rho(t) * (field(x + t*u) - u); the companion point x + t*u tracks the
// unmodified flow, so subtracting the steady upward drift leaves only the
// lateral settling motion.
template <class Field>
Vec rk4_drift_removed(const Vec& x, double t, double h, const Vec& u,
                      double omega, Field&& f) {
  auto g = [&](double s, const Vec& y) -> Vec {
    const double r = phase_out(s, omega);
    if (r == 0.0) return Vec::Zero(y.size());
    return r * (f(y + s * u) - u);
  };
  const Vec k1 = g(t, x);
  const Vec k2 = g(t + h / 2.0, x + (h / 2.0) * k1);
  const Vec k3 = g(t + h / 2.0, x + (h / 2.0) * k2);
  const Vec k4 = g(t + h, x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

std::string to_string(FlowMode mode) {
  switch (mode) {
    case FlowMode::global: return "global";
    case FlowMode::modified: return "modified";
    case FlowMode::phased: return "phased";
  }
  return "unknown";
}

FlowMode flow_mode_from_string(const std::string& s) {
  if (s == "global") return FlowMode::global;
  if (s == "modified") return FlowMode::modified;
  if (s == "phased") return FlowMode::phased;
  throw PreconditionFailed("unknown flow mode: " + s);
}

double IsotopyTrace::max_displacement() const {
  const auto& d = snapshots.back().displacement;
  return d.empty() ? 0.0 : *std::max_element(d.begin(), d.end());
}

double IsotopyTrace::total_displacement() const {
  const auto& d = snapshots.back().displacement;
  return std::accumulate(d.begin(), d.end(), 0.0);
}

Vec step_global(const Vec& x, const AmbientField& field, double h) {
  return rk4_autonomous(x, h, [&](const Vec& y) { return field.eval(y); });
}

Vec step_modified(const Vec& x, double t, const AmbientField& field, double h,
                  double omega) {
  return rk4_drift_removed(x, t, h, field.vertical(), omega,
                           [&](const Vec& y) { return field.eval(y); });
}

EmbeddedManifold manifold_at(const EmbeddedManifold& like, const Snapshot& snap) {
  EmbeddedManifold out =
      like.m() == 1
          ? EmbeddedManifold(like.split(), snap.positions, like.components())
          : EmbeddedManifold(like.split(), snap.positions, like.grid_nu(),
                             like.grid_nv());
  out.set_boundary_flags(like.boundary_flags());
  return out;
}

IsotopyTrace integrate(const EmbeddedManifold& M, const AmbientField& field,
                       const FlowConfig& cfg, const std::vector<char>* frozen,
                       bool anchored) {
  if (cfg.step_h <= 0.0) throw PreconditionFailed("flow: step_h must be > 0");
  if (cfg.t_max <= 0.0) throw PreconditionFailed("flow: t_max must be > 0");
  if (cfg.record_every < 1)
    throw PreconditionFailed("flow: record_every must be >= 1");
  if (anchored && !field.anchored_ready())
    throw PreconditionFailed("flow: anchored run without prepared anchors");
  const int n = M.sample_count();
  if (anchored && field.sample_count() != n)
    throw PreconditionFailed("flow: anchored run needs field built on the same samples");
  if (frozen && static_cast<int>(frozen->size()) != n)
    throw PreconditionFailed("flow: frozen mask size mismatch");

  const Vec u = field.vertical();
  const int vi = M.split().vertical_index();
  const double fh = field.freeze_height();
  const double h = cfg.step_h;
  const double omega = cfg.mode == FlowMode::phased ? cfg.omega : 0.0;
  const bool drift_removed = cfg.mode != FlowMode::global;

  auto f = [&](const Vec& x, int anchor) -> Vec {
    return anchored ? field.eval_anchored(x, anchor) : field.eval(x);
  };

  std::vector<Vec> x = M.positions();
  const std::vector<Vec> x0 = x;
  std::vector<Vec> carried(n, u);
  std::vector<char> retired(n, 0);       // flow increment is exactly zero forever
  std::vector<char> carried_done(n, 0);  // carried vector is exactly u forever

  IsotopyTrace trace;
  trace.mode = cfg.mode;
  trace.config = cfg;
  trace.vertical_index = vi;

  // Carried frame at time t: field(x + tau*u) with tau the effective flowed
  // time (integral of the phase-out factor), or field(x) for the raw flow.
  auto update_carried = [&](double t) -> double {
    const double tau = drift_removed ? phase_out_integral(t, omega) : 0.0;
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      if (carried_done[i]) continue;
      if (drift_removed) {
        if (x[i][vi] + tau > fh) {
          carried[i] = u;
          carried_done[i] = 1;  // tau never decreases, x[i] is lateral-only above fh
          continue;
        }
        carried[i] = f(x[i] + tau * u, i);
      } else {
        if (x[i][vi] > fh) {
          carried[i] = u;
          carried_done[i] = 1;  // the field above fh is u, so x keeps rising
          continue;
        }
        carried[i] = f(x[i], i);
      }
      worst = std::max(worst, angle_between(carried[i], u));
    }
    return worst;
  };

  auto record = [&](double t) {
    Snapshot snap;
    snap.time = t;
    snap.positions = x;
    snap.carried = carried;
    snap.displacement.resize(n);
    for (int i = 0; i < n; ++i) snap.displacement[i] = (x[i] - x0[i]).norm();
    trace.snapshots.push_back(std::move(snap));
  };

  double worst = update_carried(0.0);
  record(0.0);
  if (worst <= cfg.verticality_tol) {
    trace.converged = true;
    trace.final_time = 0.0;
    return trace;
  }

  const int total_steps =
      std::max(1, static_cast<int>(std::ceil(cfg.t_max / h - 1e-9)));
  int steps_after_ramp_close = 0;
  for (int k = 1; k <= total_steps; ++k) {
    const double t_prev = (k - 1) * h;
    const double t = k * h;

    // Once the phase-out ramp has fully closed, every increment is exactly
    // zero and the carried frame is pinned; a short tail is still stepped so
    // traces show the frozen state, then the run stops unconverged.
    const bool ramp_closed = omega > 0.0 && t_prev >= 2.0 * omega;
    if (!ramp_closed) {
      double step_max = 0.0;
      for (int i = 0; i < n; ++i) {
        if (retired[i] || (frozen && (*frozen)[i])) continue;
        if (drift_removed && x[i][vi] + t_prev > fh) {
          retired[i] = 1;  // all four stage companions sit above fh: zero increment
          continue;
        }
        const Vec before = x[i];
        auto fi = [&](const Vec& y) { return f(y, i); };
        x[i] = drift_removed
                   ? rk4_drift_removed(before, t_prev, h, u, omega, fi)
                   : rk4_autonomous(before, h, fi);
        step_max = std::max(step_max, (x[i] - before).norm() / h);
      }
      trace.max_step_speed = std::max(trace.max_step_speed, step_max);
      worst = update_carried(t);
    } else {
      ++steps_after_ramp_close;
    }

    const bool converged = worst <= cfg.verticality_tol;
    const bool stop = converged || k == total_steps ||
                      (ramp_closed && steps_after_ramp_close >= 2 * cfg.record_every);
    if (k % cfg.record_every == 0 || stop) record(t);
    if (stop) {
      trace.converged = converged;
      trace.final_time = t;
      break;
    }
  }
  return trace;
}

}  // namespace straightflow

#pragma once

#include <string>
#include <vector>

#include "straightflow/flow.hpp"
#include "straightflow/manifold.hpp"

namespace straightflow {

/// One checked bound: what was measured, what it had to satisfy, and whether
/// it did. `bound_name` spells out the inequality in words so reports are
/// self-describing.
struct InvariantEntry {
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  bool pass = false;
  std::string bound_name;
};

struct InvariantReport {
  std::vector<InvariantEntry> entries;

  bool overall() const;
  const InvariantEntry* find(const std::string& name) const;
  void add(InvariantEntry e) { entries.push_back(std::move(e)); }
};

/// Minimum height-gain rate of a raw (drift-in) flow trace: min over recorded
/// snapshot pairs and samples of dheight/dt. Pass iff
/// >= sin(epsilon_angle - mu) - 1e-3. Throws WrongMode on drift-removed
/// traces, whose whole point is to not rise.
InvariantEntry check_rise_rate(const IsotopyTrace& trace, double epsilon_angle,
                               double mu);

/// Maximum per-step sample speed of a drift-removed trace. Pass iff
/// <= sqrt(2) + 1e-3.
InvariantEntry check_speed(const IsotopyTrace& trace);

/// Maximum endpoint displacement over samples. Pass iff < eps_budget.
InvariantEntry check_displacement(const IsotopyTrace& trace, double eps_budget);

/// Minimum angle between the carried vector and the tangent space, over every
/// recorded snapshot and sample. Pass iff strictly positive throughout and
/// >= mu - smoothing - 1e-6 at t = 0. `topology` supplies the connectivity
/// for rebuilding tangent frames at snapshot positions.
InvariantEntry check_normality(const IsotopyTrace& trace,
                               const EmbeddedManifold& topology, double mu,
                               double smoothing);

/// Immersion margin of the vertical projection: min over samples and tangent
/// directions of |projected tangent| / |tangent|. Pass iff >= tol.
InvariantEntry check_immersion(const EmbeddedManifold& final_M, double tol);

struct DoublePoint {
  int seg_a = 0, seg_b = 0;  // first sample id of each crossing segment
  Vec point;                 // crossing location (midpoint in proximity mode)
  double angle = 0.0;        // crossing angle, in (0, pi/2]
  bool transverse = true;
};

struct DoublePointCensus {
  std::vector<DoublePoint> points;
  double min_angle = kInf;  // over found points; kInf when none

  int count() const { return static_cast<int>(points.size()); }
  bool all_transverse() const;
};

/// Census of self-crossings among non-adjacent segments of a 1-dimensional
/// manifold. In a 2-dimensional ambient space crossings are exact segment
/// intersections; in higher dimension pairs closer than proximity_tol count
/// (proximity_tol must then be > 0). A crossing whose angle falls below
/// transverse_tol is flagged non-transverse but still counted.
DoublePointCensus count_double_points(const EmbeddedManifold& curve,
                                      double transverse_tol,
                                      double proximity_tol = 0.0);

/// Minimum distance between two closed segments [p1,p2] and [p3,p4].
double segment_distance(const Vec& p1, const Vec& p2, const Vec& p3,
                        const Vec& p4);

}  // namespace straightflow

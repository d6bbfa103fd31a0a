#include "straightflow/verify.hpp"

#include <algorithm>
#include <cmath>

#include "straightflow/detail/smooth.hpp"
#include "straightflow/errors.hpp"

namespace straightflow {

namespace {
using detail::clamp_unit;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

bool InvariantReport::overall() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const InvariantEntry& e) { return e.pass; });
}

const InvariantEntry* InvariantReport::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

InvariantEntry check_rise_rate(const IsotopyTrace& trace, double epsilon_angle,
                               double mu) {
  if (trace.mode != FlowMode::global)
    throw WrongMode("rise rate is only meaningful for the raw flow; "
                    "drift-removed traces subtract the climb");
  InvariantEntry e;
  e.name = "rise_rate";
  e.bound = std::sin(epsilon_angle - mu) - 1e-3;
  e.bound_name = "min dheight/dt >= sin(epsilon - mu) - 1e-3";
  const int vi = trace.vertical_index;
  double measured = kInf;
  for (std::size_t k = 1; k < trace.snapshots.size(); ++k) {
    const Snapshot& a = trace.snapshots[k - 1];
    const Snapshot& b = trace.snapshots[k];
    const double dt = b.time - a.time;
    for (std::size_t i = 0; i < a.positions.size(); ++i)
      measured = std::min(measured,
                          (b.positions[i][vi] - a.positions[i][vi]) / dt);
  }
  e.measured = measured;
  e.pass = measured >= e.bound;
  return e;
}

InvariantEntry check_speed(const IsotopyTrace& trace) {
  InvariantEntry e;
  e.name = "speed";
  e.measured = trace.max_step_speed;
  e.bound = std::sqrt(2.0) + 1e-3;
  e.bound_name = "max |dx|/dt <= sqrt(2) + 1e-3";
  e.pass = e.measured <= e.bound;
  return e;
}

InvariantEntry check_displacement(const IsotopyTrace& trace, double eps_budget) {
  InvariantEntry e;
  e.name = "displacement";
  e.measured = trace.max_displacement();
  e.bound = eps_budget;
  e.bound_name = "max |final - initial| < epsilon budget";
  e.pass = e.measured < e.bound;
  return e;
}

InvariantEntry check_normality(const IsotopyTrace& trace,
                               const EmbeddedManifold& topology, double mu,
                               double smoothing) {
  InvariantEntry e;
  e.name = "normality";
  e.bound = 0.0;
  e.bound_name =
      "angle(carried, tangent space) > 0 at every snapshot, and >= "
      "mu - smoothing - 1e-6 at t = 0";
  double overall = kInf;
  double at_start = kInf;
  for (std::size_t k = 0; k < trace.snapshots.size(); ++k) {
    const Snapshot& s = trace.snapshots[k];
    const EmbeddedManifold Mk = manifold_at(topology, s);
    const TangentFrame Tk = estimate_tangent_frame(Mk);
    for (int i = 0; i < Mk.sample_count(); ++i) {
      const Vec& c = s.carried[i];
      const double len = c.norm();
      if (len <= 0.0) {
        overall = 0.0;
        continue;
      }
      const double to_space =
          std::asin(clamp_unit(Tk.reject(i, c).norm() / len));
      overall = std::min(overall, to_space);
      if (k == 0) at_start = std::min(at_start, to_space);
    }
  }
  e.measured = overall;
  e.pass = overall > 0.0 && at_start >= mu - smoothing - 1e-6;
  return e;
}

InvariantEntry check_immersion(const EmbeddedManifold& final_M, double tol) {
  if (!final_M.split().has_vertical())
    throw PreconditionFailed("immersion check needs a vertical factor to drop");
  InvariantEntry e;
  e.name = "immersion";
  e.bound = tol;
  e.bound_name = "min |projected tangent| / |tangent| >= tol";
  const TangentFrame T = estimate_tangent_frame(final_M);
  const int vi = final_M.split().vertical_index();
  double measured = kInf;
  for (int i = 0; i < T.sample_count(); ++i) {
    for (const Vec& t : T.basis[i]) {
      const double vert = t[vi];
      const double flat = std::sqrt(std::max(0.0, 1.0 - vert * vert));
      measured = std::min(measured, flat);
    }
  }
  e.measured = measured;
  e.pass = measured >= tol;
  return e;
}

bool DoublePointCensus::all_transverse() const {
  return std::all_of(points.begin(), points.end(),
                     [](const DoublePoint& p) { return p.transverse; });
}

namespace {

struct Segment {
  int a = 0, b = 0;  // sample ids
};

std::vector<Segment> enumerate_segments(const EmbeddedManifold& M) {
  std::vector<Segment> segs;
  for (const Component& c : M.components()) {
    for (int k = 0; k + 1 < c.count; ++k)
      segs.push_back({c.start + k, c.start + k + 1});
    if (c.closed && c.count > 2) segs.push_back({c.start + c.count - 1, c.start});
  }
  return segs;
}

bool share_sample(const Segment& s, const Segment& t) {
  return s.a == t.a || s.a == t.b || s.b == t.a || s.b == t.b;
}

double cross2(const Vec& o, const Vec& p, const Vec& q) {
  return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]);
}

double crossing_angle(const Vec& d1, const Vec& d2) {
  const double n1 = d1.norm(), n2 = d2.norm();
  if (n1 <= 0.0 || n2 <= 0.0) return 0.0;
  const double ang = std::acos(detail::clamp_unit(d1.dot(d2) / (n1 * n2)));
  return std::min(ang, kPi - ang);
}

// Closest-approach parameters of segments p1+s*(p2-p1), p3+t*(p4-p3),
// clamped to [0,1]^2.
void closest_params(const Vec& p1, const Vec& p2, const Vec& p3, const Vec& p4,
                    double& s, double& t) {
  const Vec d1 = p2 - p1, d2 = p4 - p3, r = p1 - p3;
  const double a = d1.squaredNorm(), e2 = d2.squaredNorm(), f = d2.dot(r);
  if (a <= 0.0 && e2 <= 0.0) {
    s = t = 0.0;
    return;
  }
  if (a <= 0.0) {
    s = 0.0;
    t = std::clamp(f / e2, 0.0, 1.0);
    return;
  }
  const double c = d1.dot(r);
  if (e2 <= 0.0) {
    t = 0.0;
    s = std::clamp(-c / a, 0.0, 1.0);
    return;
  }
  const double b = d1.dot(d2);
  const double denom = a * e2 - b * b;
  s = denom > 0.0 ? std::clamp((b * f - c * e2) / denom, 0.0, 1.0) : 0.0;
  t = (b * s + f) / e2;
  if (t < 0.0) {
    t = 0.0;
    s = std::clamp(-c / a, 0.0, 1.0);
  } else if (t > 1.0) {
    t = 1.0;
    s = std::clamp((b - c) / a, 0.0, 1.0);
  }
}

}  // namespace

double segment_distance(const Vec& p1, const Vec& p2, const Vec& p3,
                        const Vec& p4) {
  double s = 0.0, t = 0.0;
  closest_params(p1, p2, p3, p4, s, t);
  return ((p1 + s * (p2 - p1)) - (p3 + t * (p4 - p3))).norm();
}

DoublePointCensus count_double_points(const EmbeddedManifold& curve,
                                      double transverse_tol,
                                      double proximity_tol) {
  if (curve.m() != 1)
    throw PreconditionFailed("double-point census: curve input required");
  const int dim = curve.split().dim();
  if (dim != 2 && proximity_tol <= 0.0)
    throw PreconditionFailed(
        "double-point census: ambient dimension > 2 needs a proximity "
        "threshold");

  const auto segs = enumerate_segments(curve);
  DoublePointCensus census;

  auto push = [&](const Segment& s, const Segment& t, const Vec& where,
                  double ang) {
    DoublePoint dp;
    dp.seg_a = s.a;
    dp.seg_b = t.a;
    dp.point = where;
    dp.angle = ang;
    dp.transverse = ang >= transverse_tol;
    census.min_angle = std::min(census.min_angle, ang);
    census.points.push_back(std::move(dp));
  };

  if (dim == 2) {
    for (std::size_t i = 0; i < segs.size(); ++i) {
      for (std::size_t j = i + 1; j < segs.size(); ++j) {
        if (share_sample(segs[i], segs[j])) continue;
        const Vec &p1 = curve.position(segs[i].a), &p2 = curve.position(segs[i].b);
        const Vec &p3 = curve.position(segs[j].a), &p4 = curve.position(segs[j].b);
        const double o1 = cross2(p1, p2, p3);
        const double o2 = cross2(p1, p2, p4);
        const double o3 = cross2(p3, p4, p1);
        const double o4 = cross2(p3, p4, p2);
        if (o1 * o2 < 0.0 && o3 * o4 < 0.0) {
          const double s = o3 / (o3 - o4);
          const Vec where = p1 + s * (p2 - p1);
          push(segs[i], segs[j], where, crossing_angle(p2 - p1, p4 - p3));
        } else if ((o1 == 0.0 || o2 == 0.0 || o3 == 0.0 || o4 == 0.0) &&
                   segment_distance(p1, p2, p3, p4) == 0.0) {
          // Touching or collinear overlap: a double point the transversality
          // flag must reject.
          double s = 0.0, t = 0.0;
          closest_params(p1, p2, p3, p4, s, t);
          const Vec where = p1 + s * (p2 - p1);
          const double ang = (o1 == 0.0 && o2 == 0.0)
                                 ? 0.0
                                 : crossing_angle(p2 - p1, p4 - p3);
          push(segs[i], segs[j], where, ang);
        }
      }
    }
    return census;
  }

  // Proximity mode: near-miss pairs count as crossings; runs of consecutive
  // near pairs around one geometric crossing are merged into a single point.
  std::vector<DoublePoint> raw;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    for (std::size_t j = i + 1; j < segs.size(); ++j) {
      if (share_sample(segs[i], segs[j])) continue;
      const Vec &p1 = curve.position(segs[i].a), &p2 = curve.position(segs[i].b);
      const Vec &p3 = curve.position(segs[j].a), &p4 = curve.position(segs[j].b);
      double s = 0.0, t = 0.0;
      closest_params(p1, p2, p3, p4, s, t);
      const Vec ca = p1 + s * (p2 - p1);
      const Vec cb = p3 + t * (p4 - p3);
      if ((ca - cb).norm() >= proximity_tol) continue;
      DoublePoint dp;
      dp.seg_a = segs[i].a;
      dp.seg_b = segs[j].a;
      dp.point = 0.5 * (ca + cb);
      dp.angle = crossing_angle(p2 - p1, p4 - p3);
      dp.transverse = dp.angle >= transverse_tol;
      raw.push_back(std::move(dp));
    }
  }
  std::vector<char> taken(raw.size(), 0);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (taken[i]) continue;
    DoublePoint rep = raw[i];
    for (std::size_t j = i + 1; j < raw.size(); ++j) {
      if (taken[j]) continue;
      if ((raw[j].point - rep.point).norm() < 2.0 * proximity_tol) {
        taken[j] = 1;
        if (raw[j].angle > rep.angle) {
          rep.angle = raw[j].angle;  // keep the most transverse witness
          rep.transverse = raw[j].transverse;
        }
      }
    }
    census.min_angle = std::min(census.min_angle, rep.angle);
    census.points.push_back(rep);
  }
  return census;
}

}  // namespace straightflow

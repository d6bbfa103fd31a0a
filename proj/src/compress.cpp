#include "straightflow/compress.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "straightflow/detail/smooth.hpp"
#include "straightflow/errors.hpp"

namespace straightflow {

namespace {

using detail::angle_between;
using detail::clamp_unit;
using detail::slerp;

constexpr double kPi = 3.14159265358979323846;

/// Codimension of M inside the flattened target (ambient minus the active
/// vertical factor).
int flat_codim(const EmbeddedManifold& M) {
  return M.split().dim() - 1 - M.m();
}

struct SceneFacts {
  bool immersed = false;
  double reach = kInf;
  double min_distance = kInf;
  double lambda = 0.0;
  double self_tol = 0.0;
};

SceneFacts probe_scene(const EmbeddedManifold& M, const CompressionConfig& cfg) {
  SceneFacts f;
  f.lambda = cfg.lambda > 0.0 ? cfg.lambda : 3.0 * M.max_edge_length();
  f.self_tol = cfg.self_intersection_tol > 0.0 ? cfg.self_intersection_tol
                                               : 1e-7 * M.max_edge_length();
  const ReachResult r = discrete_reach_unchecked(M, f.lambda);
  f.reach = r.reach;
  f.min_distance = r.min_distance;
  f.immersed = r.min_distance < f.self_tol;
  return f;
}

bool input_vertical(const EmbeddedManifold& M, const NormalFrame& F, double tol) {
  const Vec u = M.split().vertical_unit();
  for (int i = 0; i < F.sample_count(); ++i)
    if (angle_between(F.active(i), u) > tol) return false;
  return true;
}

double mu_for(const CompressionConfig& cfg, double epsilon) {
  return cfg.mu > 0.0 ? cfg.mu : epsilon / 4.0;
}

double smoothing_for(const CompressionConfig& cfg, double mu) {
  const double s = cfg.smoothing > 0.0 ? cfg.smoothing : mu / 2.0;
  return std::min(s, 0.9 * mu);
}

double rate_floor(double epsilon, double mu) {
  return std::sin(std::clamp(epsilon - mu, 1e-2, kPi / 2.0));
}

double default_t_max(const EmbeddedManifold& M, double nu, double h,
                     double epsilon, double mu) {
  return 10.0 * (M.height_span() + nu + h) / rate_floor(epsilon, mu);
}

/// Rotate near-down active vectors away from straight down, inside the
/// normal fibre, dragging passengers. Needs a normal fibre of dimension >= 2
/// (otherwise there is nowhere to go); the caller gates on codimension.
NormalFrame ground_by_perturbation(const EmbeddedManifold& M,
                                   const TangentFrame& T, const NormalFrame& F,
                                   double eps_target, std::uint64_t seed,
                                   int max_rounds, GroundingReport& grounding) {
  NormalFrame cur = F;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Vec u = M.split().vertical_unit();
  const Vec down = -u;
  for (int round = 0; round < max_rounds; ++round) {
    grounding = measure_grounding(M, cur);
    if (grounding.epsilon > eps_target) return cur;
    for (int i = 0; i < cur.sample_count(); ++i) {
      const Vec a = cur.active(i);
      const double ang = angle_between(a, down);
      if (ang > eps_target) continue;
      // Direction of fastest escape from the pole, projected back into the
      // normal fibre; random when the vector sits exactly on the pole.
      Vec dir = -(down - down.dot(a) * a);
      auto admissible = [&](Vec v) -> Vec {
        v = T.reject(i, v);
        v -= v.dot(a) * a;
        const double nn = v.norm();
        return nn > 1e-9 ? Vec(v / nn) : Vec(Vec::Zero(v.size()));
      };
      dir = admissible(dir);
      int guard = 0;
      while (dir.norm() < 0.5 && guard++ < 16) {
        Vec w(a.size());
        for (int d = 0; d < w.size(); ++d) w[d] = gauss(rng);
        dir = admissible(w);
      }
      if (dir.norm() < 0.5)
        throw NotGrounded("no room to rotate the field away from straight "
                          "down at sample " + std::to_string(i));
      const double eta = std::min(eps_target * 1.5 - ang, kPi / 4.0);
      const Vec target = std::cos(eta) * a + std::sin(eta) * dir;
      for (std::size_t j = 1; j < cur.fields[i].size(); ++j)
        cur.fields[i][j] = transport_by_rotation(a, target, cur.fields[i][j]);
      cur.fields[i][0] = target;
    }
  }
  grounding = measure_grounding(M, cur);
  if (grounding.epsilon > eps_target) return cur;
  throw NotGrounded("grounding perturbation failed: min angle with straight "
                    "down stayed at " + std::to_string(grounding.epsilon));
}

std::vector<char> frozen_mask(const EmbeddedManifold& M,
                              const std::vector<int>& region) {
  std::vector<char> mask(M.sample_count(), 0);
  for (int i : region) {
    if (i < 0 || i >= M.sample_count())
      throw PreconditionFailed("relative region sample id out of range");
    mask[i] = 1;
  }
  return mask;
}

/// Passenger fields after a flow: rotate each by the in-plane rotation the
/// active field experienced, then store the carried active.
NormalFrame frame_after_flow(const NormalFrame& start, const Snapshot& end) {
  NormalFrame out = start;
  for (int i = 0; i < out.sample_count(); ++i) {
    const Vec& from = start.active(i);
    const Vec& to = end.carried[i];
    for (std::size_t j = 1; j < out.fields[i].size(); ++j)
      out.fields[i][j] = transport_by_rotation(from, to, out.fields[i][j]);
    out.fields[i][0] = to;
  }
  return out;
}

void fill_displacement(CompressionResult& r, const std::vector<Vec>& x0) {
  const int n = r.final_manifold.sample_count();
  r.sample_displacement.assign(n, 0.0);
  r.max_displacement = 0.0;
  for (int i = 0; i < n; ++i) {
    r.sample_displacement[i] = (r.final_manifold.position(i) - x0[i]).norm();
    r.max_displacement = std::max(r.max_displacement, r.sample_displacement[i]);
  }
}

InvariantEntry grounding_entry(double epsilon, double mu) {
  InvariantEntry e;
  e.name = "grounding";
  e.measured = epsilon;
  e.bound = mu;
  e.bound_name = "min angle(field, straight down) > mu";
  e.pass = epsilon > mu;
  return e;
}

InvariantEntry relative_entry(const CompressionResult& r,
                              const std::vector<int>& region) {
  InvariantEntry e;
  e.name = "relative_fixed";
  e.bound = 1e-6;
  e.bound_name = "pinned samples move < 1e-6";
  double worst = 0.0;
  for (int i : region) worst = std::max(worst, r.sample_displacement[i]);
  e.measured = worst;
  e.pass = worst < e.bound;
  return e;
}

InvariantEntry transversality_entry(const DoublePointCensus& census,
                                    double transverse_tol) {
  InvariantEntry e;
  e.name = "double_points_transverse";
  e.measured = census.min_angle;
  e.bound = transverse_tol;
  e.bound_name = "every projected crossing angle >= transverse tolerance";
  e.pass = census.all_transverse();
  return e;
}

void census_for_curve(CompressionResult& r, const CompressionConfig& cfg,
                      double nu) {
  if (r.final_manifold.m() != 1 || !r.ok()) return;
  if (!r.final_manifold.split().has_vertical()) return;
  const EmbeddedManifold flat = project_to_Q(r.final_manifold);
  if (flat.split().dim() < 2) return;
  const double prox =
      flat.split().dim() == 2
          ? 0.0
          : (cfg.proximity_tol > 0.0 ? cfg.proximity_tol : nu / 4.0);
  r.census = count_double_points(flat, cfg.transverse_tol, prox);
  if (!r.census.points.empty())
    r.report.add(transversality_entry(r.census, cfg.transverse_tol));
}

CompressionResult refusal(const EmbeddedManifold& M, const NormalFrame& F,
                          const std::string& code, const std::string& message) {
  CompressionResult r;
  r.status = CompressionStatus::precondition_failed;
  r.error_code = code;
  r.message = message;
  r.final_manifold = M;
  r.final_frame = F;
  r.sample_displacement.assign(M.sample_count(), 0.0);
  return r;
}

CompressionResult from_error(const EmbeddedManifold& M, const NormalFrame& F,
                             const Error& e) {
  return refusal(M, F, e.code(), e.what());
}

/// Straighten open segments whose normal fibre has no room to turn: unroll
/// each component to a straight horizontal segment about its midpoint,
/// carrying the field as the rotated unit normal. Only the two-dimensional
/// ambient case reaches this path (m = 1 at flat codimension 0).
CompressionResult unroll_segments(const EmbeddedManifold& M,
                                  const NormalFrame& alpha,
                                  const CompressionConfig& cfg) {
  if (M.split().dim() != 2)
    return refusal(M, alpha, "not_implemented",
                   "segment unrolling supports a two-dimensional ambient "
                   "space only");
  if (!cfg.relative_region.empty())
    return refusal(M, alpha, "precondition_failed",
                   "segment unrolling moves whole components and cannot pin "
                   "a relative region");
  const int n = M.sample_count();
  const int vi = M.split().vertical_index();
  const int qi = 1 - vi;
  const Vec u = M.split().vertical_unit();

  // Per-sample straight-line targets: arclength-parametrized horizontal
  // segments. The field must end vertically up, which fixes the unrolling
  // direction per component: the 90-degree rotation taking the tangent to
  // the field must take the target direction to +u.
  std::vector<Vec> target(n, Vec::Zero(2));
  std::vector<double> sign(n, 1.0);
  for (const Component& c : M.components()) {
    if (c.closed)
      return refusal(M, alpha, "codimension",
                     "a closed curve cannot be straightened without a "
                     "vertical normal direction to turn through");
    // Arc length from the component start.
    std::vector<double> s(c.count, 0.0);
    for (int k = 1; k < c.count; ++k)
      s[k] = s[k - 1] +
             (M.position(c.start + k) - M.position(c.start + k - 1)).norm();
    const int mid = c.count / 2;
    const Vec xm = M.position(c.start + mid);
    // Orientation: alpha = sigma * R90(tangent); after unrolling the tangent
    // is d and the field sigma * R90(d) must be +u.
    const Vec t0 = (M.position(c.start + 1) - M.position(c.start)).normalized();
    // R90 in (qi, vi) order: (a, b) -> (-b, a) with a = qi comp, b = vi comp.
    Vec r90t(2);
    r90t[qi] = -t0[vi];
    r90t[vi] = t0[qi];
    const double sigma = alpha.active(c.start).dot(r90t) >= 0.0 ? 1.0 : -1.0;
    // Need sigma * R90(d) = u with d horizontal: R90(d e_q) = d e_v, so
    // d = sigma.
    Vec dir = Vec::Zero(2);
    dir[qi] = sigma;
    for (int k = 0; k < c.count; ++k) {
      target[c.start + k] = xm + (s[k] - s[mid]) * dir;
      sign[c.start + k] = sigma;
    }
  }

  double span = 1e-9;
  for (int i = 0; i < n; ++i)
    span = std::max(span, (target[i] - M.position(i)).norm());
  const double h = cfg.step_h > 0.0
                       ? cfg.step_h
                       : std::max(0.05 * span, 0.2 * M.min_edge_length());
  const int steps = std::max(1, static_cast<int>(std::ceil(span / h)));

  CompressionResult r;
  r.trace.mode = FlowMode::modified;
  r.trace.vertical_index = vi;
  r.trace.config.step_h = h;
  r.trace.config.t_max = span;
  r.trace.config.mode = FlowMode::modified;
  r.trace.config.verticality_tol = cfg.verticality_tol;
  r.trace.config.record_every = cfg.record_every;

  auto positions_at = [&](double f) {
    std::vector<Vec> p(n);
    for (int i = 0; i < n; ++i)
      p[i] = M.position(i) + f * (target[i] - M.position(i));
    return p;
  };
  for (int k = 0; k <= steps; ++k) {
    const double f = static_cast<double>(k) / steps;
    Snapshot snap;
    snap.time = f * span;
    snap.positions = positions_at(f);
    snap.carried.resize(n);
    snap.displacement.resize(n);
    // Field = sign * (90-degree rotation of the current unit tangent).
    Snapshot shape;
    shape.positions = snap.positions;
    const EmbeddedManifold Mk = manifold_at(M, shape);
    const TangentFrame Tk = estimate_tangent_frame(Mk);
    for (int i = 0; i < n; ++i) {
      const Vec& t = Tk.basis[i][0];
      Vec f90(2);
      f90[qi] = -t[vi];
      f90[vi] = t[qi];
      snap.carried[i] = sign[i] * f90;
      snap.displacement[i] = (snap.positions[i] - M.position(i)).norm();
    }
    r.trace.snapshots.push_back(std::move(snap));
  }
  // Linear interpolation: per-sample speed is |target - start| / span <= 1.
  for (int i = 0; i < n; ++i)
    r.trace.max_step_speed =
        std::max(r.trace.max_step_speed,
                 span > 0.0 ? (target[i] - M.position(i)).norm() / span : 0.0);
  r.trace.final_time = span;
  r.trace.converged = true;

  r.final_manifold = manifold_at(M, r.trace.snapshots.back());
  r.final_frame = NormalFrame::single(r.trace.snapshots.back().carried);
  r.status = CompressionStatus::compressed;
  fill_displacement(r, M.positions());

  const ReachResult rr = discrete_reach_unchecked(r.final_manifold, 0.0);
  InvariantEntry emb;
  emb.name = "embedded_final";
  emb.measured = rr.min_distance;
  emb.bound = 0.0;
  emb.bound_name = "final samples pairwise distinct";
  emb.pass = rr.min_distance > 0.0 || rr.arg_i < 0;
  r.report.add(emb);
  r.report.add(check_speed(r.trace));
  r.report.add(check_normality(r.trace, M, 0.0, 0.0));
  if (cfg.epsilon_budget > 0.0)
    r.report.add(check_displacement(r.trace, cfg.epsilon_budget));
  if (!r.report.overall() && r.status == CompressionStatus::compressed) {
    r.status = CompressionStatus::not_converged;
    r.error_code = "invariant_failed";
  }
  return r;
}

struct Gate {
  bool refused = false;
  bool unroll = false;
  std::string code, message;
  SceneFacts facts;
};

Gate front_gate(const EmbeddedManifold& M, const TangentFrame& T,
                const NormalFrame& alpha, const CompressionConfig& cfg) {
  Gate g;
  g.facts = probe_scene(M, cfg);
  const int codim = flat_codim(M);
  if (codim >= 1) return g;

  // Flat codimension zero: accepted only for a raw perpendicular grounded
  // field on an embedding, or for open segments (straightened by unrolling).
  const bool perp = max_tangential_component(T, alpha) <= 1e-6;
  const bool grounded = measure_grounding(M, alpha).epsilon > 1e-3;
  if (perp && grounded) {
    if (!g.facts.immersed) return g;
    g.refused = true;
    g.code = "codimension_zero_immersion";
    g.message =
        "the projection target leaves no normal direction to turn through: a "
        "closed curve does not immerse into a line, so this self-crossing "
        "input cannot be straightened";
    return g;
  }
  bool all_boundary = true;
  for (const Component& c : M.components())
    if (c.closed) all_boundary = false;
  if (M.m() == 1 && !g.facts.immersed && all_boundary && M.components().size() > 0) {
    g.unroll = true;
    return g;
  }
  if (M.m() == 2) {
    g.refused = true;
    g.code = "not_implemented";
    g.message = "surfaces at flat codimension zero with boundary are not "
                "supported";
    return g;
  }
  g.refused = true;
  g.code = "codimension";
  g.message = "flat codimension is zero and the field offers no grounded "
              "perpendicular direction to rotate upwards";
  return g;
}

/// Shared tail: census, relative entry, displacement bookkeeping.
void finish_result(CompressionResult& r, const EmbeddedManifold& M,
                   const CompressionConfig& cfg, const std::vector<Vec>& x0,
                   double nu) {
  fill_displacement(r, x0);
  if (!cfg.relative_region.empty())
    r.report.add(relative_entry(r, cfg.relative_region));
  census_for_curve(r, cfg, nu);
  if (r.status == CompressionStatus::compressed && !r.report.overall()) {
    r.status = CompressionStatus::not_converged;
    if (r.error_code.empty()) r.error_code = "invariant_failed";
    r.message = "flow converged but a checked bound failed";
  }
}

}  // namespace

std::string to_string(CompressionStatus s) {
  switch (s) {
    case CompressionStatus::compressed: return "compressed";
    case CompressionStatus::not_converged: return "not_converged";
    case CompressionStatus::precondition_failed: return "precondition_failed";
  }
  return "unknown";
}

CompressionResult compress_global(const EmbeddedManifold& M,
                                  const NormalFrame& alpha,
                                  const CompressionConfig& cfg) {
  const std::vector<Vec> x0 = M.positions();
  try {
    if (alpha.sample_count() != M.sample_count())
      throw PreconditionFailed("field sample count differs from the manifold");
    const TangentFrame T = estimate_tangent_frame(M);
    validate_normal_frame(M, T, alpha, cfg.unit_tol, cfg.independence_tol);

    const Gate gate = front_gate(M, T, alpha, cfg);
    if (gate.refused) return refusal(M, alpha, gate.code, gate.message);
    if (gate.unroll) return unroll_segments(M, alpha, cfg);
    const SceneFacts& facts = gate.facts;
    if (!cfg.relative_region.empty())
      throw PreconditionFailed(
          "relative compression needs the phase-out ramp of the localised "
          "pipeline; run in local mode");

    CompressionResult r;
    r.params.lambda = facts.lambda;
    r.params.immersed_owner = facts.immersed;

    const bool already_vertical = input_vertical(M, alpha, cfg.verticality_tol);
    NormalFrame F = alpha;
    GroundingReport grounding;
    double mu = 0.0, smoothing = 0.0;
    if (!already_vertical) {
      F = perpendicularize(M, T, alpha, cfg.independence_tol);
      grounding = measure_grounding(M, F);
      const double needed = cfg.mu > 0.0 ? cfg.mu : 1e-3;
      if (grounding.epsilon <= needed) {
        if (flat_codim(M) >= 1)
          F = ground_by_perturbation(M, T, F, std::max(0.05, 1.5 * needed),
                                     cfg.rng_seed, cfg.max_perturb_rounds,
                                     grounding);
        else
          throw NotGrounded("field reaches straight down and the fibre has "
                            "no room to perturb");
      }
      mu = mu_for(cfg, grounding.epsilon);
      if (mu <= 0.0 || mu >= grounding.epsilon)
        throw NotGrounded("need 0 < mu < grounding angle; measured " +
                          std::to_string(grounding.epsilon));
      smoothing = smoothing_for(cfg, mu);
      F = upwards_rotate(M, F, mu, smoothing);
    } else {
      grounding = measure_grounding(M, F);
    }
    r.params.epsilon = grounding.epsilon;
    r.params.mu = mu;
    r.params.smoothing = smoothing;

    double nu = cfg.nu;
    if (nu <= 0.0)
      nu = facts.immersed ? 2.0 * M.max_edge_length()
                          : std::min(0.9 * facts.reach, 10.0 * M.max_edge_length());
    else if (!facts.immersed && nu > facts.reach)
      throw PreconditionFailed("nu exceeds the discrete reach " +
                               std::to_string(facts.reach));
    r.params.nu = nu;

    AmbientField field = globalize(M, F, {nu, facts.lambda}, cfg.ambiguous_tol);
    if (facts.immersed) field.prepare_anchors(M);

    FlowConfig fc;
    fc.step_h = cfg.step_h > 0.0 ? cfg.step_h
                                 : 0.2 * std::min(nu, M.min_edge_length());
    fc.t_max = cfg.t_max > 0.0
                   ? cfg.t_max
                   : default_t_max(M, nu, fc.step_h, grounding.epsilon, mu);
    fc.mode = FlowMode::global;
    fc.verticality_tol = cfg.verticality_tol;
    fc.record_every = cfg.record_every;
    r.params.step_h = fc.step_h;
    r.params.t_max = fc.t_max;
    r.params.epsilon_budget = cfg.epsilon_budget;

    r.trace = integrate(M, field, fc, nullptr, facts.immersed);
    r.final_manifold = manifold_at(M, r.trace.snapshots.back());
    r.final_frame = frame_after_flow(F, r.trace.snapshots.back());
    r.status = r.trace.converged ? CompressionStatus::compressed
                                 : CompressionStatus::not_converged;
    if (!r.trace.converged) {
      r.error_code = "not_converged";
      r.message = "flow hit t_max before the carried field became vertical";
    }

    r.report.add(grounding_entry(grounding.epsilon, mu));
    r.report.add(check_speed(r.trace));
    r.report.add(check_normality(r.trace, M, mu, smoothing));
    if (cfg.epsilon_budget > 0.0)
      r.report.add(check_displacement(r.trace, cfg.epsilon_budget));
    if (r.trace.converged)
      r.report.add(check_immersion(r.final_manifold, cfg.immersion_tol));

    finish_result(r, M, cfg, x0, nu);
    return r;
  } catch (const Error& e) {
    return from_error(M, alpha, e);
  }
}

namespace {

struct LocalAttempt {
  IsotopyTrace phase1;
  IsotopyTrace residual;
  EmbeddedManifold final_M;
  NormalFrame final_frame;
  SubsetMarking marking;
  GroundingReport grounding;
  double mu = 0.0, smoothing = 0.0, nu = 0.0, delta = 0.0, omega = 0.0;
  double step_h = 0.0, t_max = 0.0;
  int perturb_rounds = 0;
  bool converged = false;
};

/// A third of the minimum vertical gap between downset samples and other
/// sheets over the same flattened point. With no second sheet the ramp is
/// effectively inert: it opens for the whole height span, which the flow
/// needs only a fraction of.
double derive_omega(const EmbeddedManifold& M, const SubsetMarking& marking,
                    double lambda, double nu) {
  const int vi = M.split().vertical_index();
  double min_gap = kInf;
  const std::vector<int> downset = marking.with(SubsetMarking::D);
  for (int i : downset) {
    const Vec& xi = M.position(i);
    for (int j = 0; j < M.sample_count(); ++j) {
      if (M.intrinsic_distance(i, j) <= lambda) continue;
      Vec dq = M.position(j) - xi;
      dq[vi] = 0.0;
      if (dq.norm() >= nu) continue;
      min_gap = std::min(min_gap, std::abs(M.position(j)[vi] - xi[vi]));
    }
  }
  return min_gap == kInf ? M.height_span() : min_gap / 3.0;
}

/// A pinch gate for anchored (immersed-owner) runs: a pair of samples that
/// is just beyond the locality radius intrinsically but within two fibre
/// radii in space makes nearest-foot resolution inside one patch ambiguous.
void check_induced_patches(const EmbeddedManifold& M, double lambda, double nu) {
  for (int i = 0; i < M.sample_count(); ++i) {
    for (int j = i + 1; j < M.sample_count(); ++j) {
      const double intr = M.intrinsic_distance(i, j);
      if (intr <= lambda || intr > 3.0 * lambda) continue;
      if ((M.position(i) - M.position(j)).norm() < 2.0 * nu)
        throw InducedNeighbourhoodClash(
            "samples " + std::to_string(i) + " and " + std::to_string(j) +
            " pinch the induced patch: shrink nu or grow lambda");
    }
  }
}

LocalAttempt run_local_once(const EmbeddedManifold& M, const NormalFrame& alpha,
                            const CompressionConfig& cfg, const SceneFacts& facts,
                            const MarkingConfig& mcfg, double nu, double delta,
                            double smoothing_scale,
                            const std::vector<char>* maskp) {
  LocalAttempt a;
  const TangentFrame T = estimate_tangent_frame(M);

  NormalFrame F = perpendicularize(M, T, alpha, cfg.independence_tol);
  a.grounding = measure_grounding(M, F);
  const double needed = cfg.mu > 0.0 ? cfg.mu : 1e-3;
  if (a.grounding.epsilon <= needed) {
    if (flat_codim(M) >= 1)
      F = ground_by_perturbation(M, T, F, std::max(0.05, 1.5 * needed),
                                 cfg.rng_seed, cfg.max_perturb_rounds,
                                 a.grounding);
    else
      throw NotGrounded("field reaches straight down and the fibre has no "
                        "room to perturb");
  }
  a.mu = mu_for(cfg, a.grounding.epsilon);
  if (a.mu <= 0.0 || a.mu >= a.grounding.epsilon)
    throw NotGrounded("need 0 < mu < grounding angle");
  a.smoothing = smoothing_for(cfg, a.mu) * smoothing_scale;
  a.nu = nu;
  a.delta = delta;

  const double perturb_angle =
      cfg.perturb_angle > 0.0 ? cfg.perturb_angle : mcfg.d_tol / 2.0;
  PerturbResult pg =
      perturb_general_position(M, T, F, mcfg, delta, perturb_angle,
                               cfg.rng_seed, cfg.max_perturb_rounds);
  a.perturb_rounds = pg.rounds;
  a.marking = pg.marking;

  NormalFrame F3 = localise(M, T, pg.frame, a.marking, cfg.collar_cells, 1e-6);
  NormalFrame F4 = upwards_rotate(M, F3, a.mu, a.smoothing);

  if (facts.immersed) check_induced_patches(M, facts.lambda, nu);
  AmbientField field = globalize(M, F4, {nu, facts.lambda}, cfg.ambiguous_tol);
  if (facts.immersed) field.prepare_anchors(M);

  a.omega = cfg.omega >= 0.0 ? cfg.omega
                             : derive_omega(M, a.marking, facts.lambda, nu);

  FlowConfig fc1;
  fc1.step_h = cfg.step_h > 0.0 ? cfg.step_h
                                : 0.2 * std::min(nu, M.min_edge_length());
  fc1.t_max = cfg.t_max > 0.0 ? cfg.t_max
                              : default_t_max(M, nu, fc1.step_h,
                                              a.grounding.epsilon, a.mu);
  fc1.mode = FlowMode::phased;
  fc1.omega = a.omega;
  fc1.verticality_tol = cfg.verticality_tol;
  fc1.record_every = cfg.record_every;
  a.step_h = fc1.step_h;
  a.t_max = fc1.t_max;

  a.phase1 = integrate(M, field, fc1, maskp, facts.immersed);
  EmbeddedManifold mid = manifold_at(M, a.phase1.snapshots.back());
  NormalFrame Fm = frame_after_flow(F4, a.phase1.snapshots.back());

  // Residual global move: the phase-out (or the localisation to the upmost
  // field) can leave a non-vertical remainder near the horizontal set; a
  // plain drift-removed flow of the remainder field finishes the job. Verticality
  // of the input makes this a no-op single-snapshot run.
  GroundingReport g2 = measure_grounding(mid, Fm);
  NormalFrame Fr = Fm;
  double mu2 = 0.0, sm2 = 0.0;
  if (!input_vertical(mid, Fm, cfg.verticality_tol)) {
    mu2 = g2.epsilon / 4.0;
    if (mu2 <= 0.0)
      throw NotGrounded("residual field reaches straight down");
    sm2 = mu2 / 2.0;
    Fr = upwards_rotate(mid, Fm, mu2, sm2);
  }
  double nu2 = nu;
  if (!facts.immersed) {
    const ReachResult rr = discrete_reach_unchecked(mid, facts.lambda);
    nu2 = std::min(nu, 0.9 * rr.reach);
  }
  AmbientField field2 = globalize(mid, Fr, {nu2, facts.lambda},
                                  cfg.ambiguous_tol);
  if (facts.immersed) field2.prepare_anchors(mid);
  FlowConfig fc2 = fc1;
  fc2.mode = FlowMode::modified;
  fc2.omega = 0.0;
  fc2.t_max = cfg.t_max > 0.0 ? cfg.t_max
                              : default_t_max(mid, nu2, fc2.step_h,
                                              g2.epsilon, mu2);
  a.residual = integrate(mid, field2, fc2, maskp, facts.immersed);

  a.final_M = manifold_at(mid, a.residual.snapshots.back());
  a.final_frame = frame_after_flow(Fr, a.residual.snapshots.back());
  a.converged = a.residual.converged;
  return a;
}

}  // namespace

CompressionResult compress_local(const EmbeddedManifold& M,
                                 const NormalFrame& alpha,
                                 const CompressionConfig& cfg) {
  const std::vector<Vec> x0 = M.positions();
  try {
    if (alpha.sample_count() != M.sample_count())
      throw PreconditionFailed("field sample count differs from the manifold");
    if (cfg.epsilon_budget <= 0.0)
      throw PreconditionFailed("local mode needs a positive epsilon budget");
    const TangentFrame T = estimate_tangent_frame(M);
    validate_normal_frame(M, T, alpha, cfg.unit_tol, cfg.independence_tol);

    const Gate gate = front_gate(M, T, alpha, cfg);
    if (gate.refused) return refusal(M, alpha, gate.code, gate.message);
    if (gate.unroll) return unroll_segments(M, alpha, cfg);
    const SceneFacts& facts = gate.facts;

    std::vector<char> mask;
    const std::vector<char>* maskp = nullptr;
    if (!cfg.relative_region.empty()) {
      mask = frozen_mask(M, cfg.relative_region);
      maskp = &mask;
    }

    // Vertical input: zero-work run through the plain pipeline (with the
    // relative region stripped — nothing moves, so the pin is trivially met).
    if (input_vertical(M, alpha, cfg.verticality_tol)) {
      CompressionConfig pass_cfg = cfg;
      pass_cfg.relative_region.clear();
      CompressionResult r = compress_global(M, alpha, pass_cfg);
      if (!cfg.relative_region.empty() &&
          r.status == CompressionStatus::compressed)
        r.report.add(relative_entry(r, cfg.relative_region));
      return r;
    }

    const double nu0 =
        cfg.nu > 0.0
            ? cfg.nu
            : (facts.immersed
                   ? 2.0 * M.max_edge_length()
                   : std::min(0.9 * facts.reach, 10.0 * M.max_edge_length()));
    if (!facts.immersed && nu0 > facts.reach)
      throw PreconditionFailed("nu exceeds the discrete reach");
    const double delta0 =
        cfg.delta > 0.0 ? cfg.delta : 5.0 * M.max_edge_length();
    const double delta_floor = 2.05 * M.max_edge_length();

    CompressionResult r;
    std::string last_error;
    for (int round = 0; round <= cfg.max_refinements; ++round) {
      const double nu_r = nu0 / static_cast<double>(1 << round);
      const double delta_r =
          std::max(delta0 / static_cast<double>(1 << round), delta_floor);
      const double sm_scale = 1.0 / static_cast<double>(1 << round);
      MarkingConfig mcfg = cfg.marking;
      mcfg.u_prime_cells = std::max(1, cfg.marking.u_prime_cells >> round);
      mcfg.u_cells = std::max(mcfg.u_prime_cells + 1, cfg.marking.u_cells >> round);
      mcfg.v_cells = std::max(1, cfg.marking.v_cells >> round);

      LocalAttempt a;
      bool attempted = false;
      for (int widen = 0; widen <= 4 && !attempted; ++widen) {
        try {
          a = run_local_once(M, alpha, cfg, facts, mcfg, nu_r, delta_r,
                             sm_scale, maskp);
          attempted = true;
        } catch (const AntipodalCollar& e) {
          // The downset runs into the collar: widen its neighbourhood and
          // re-derive the marking.
          if (widen == 4) throw;
          mcfg.v_cells += 1;
          last_error = e.what();
        }
      }

      r = CompressionResult();
      r.params.epsilon = a.grounding.epsilon;
      r.params.mu = a.mu;
      r.params.smoothing = a.smoothing;
      r.params.nu = a.nu;
      r.params.lambda = facts.lambda;
      r.params.delta = a.delta;
      r.params.omega = a.omega;
      r.params.step_h = a.step_h;
      r.params.t_max = a.t_max;
      r.params.epsilon_budget = cfg.epsilon_budget;
      r.params.refinement_round = round;
      r.params.perturb_rounds = a.perturb_rounds;
      r.params.immersed_owner = facts.immersed;
      r.trace = std::move(a.phase1);
      r.residual = std::move(a.residual);
      r.final_manifold = std::move(a.final_M);
      r.final_frame = std::move(a.final_frame);
      r.marking = std::move(a.marking);
      r.status = a.converged ? CompressionStatus::compressed
                             : CompressionStatus::not_converged;
      if (!a.converged) {
        r.error_code = "not_converged";
        r.message = "residual flow hit t_max before vertical";
      }

      fill_displacement(r, x0);
      const bool within_budget = r.max_displacement < cfg.epsilon_budget;
      if (r.status == CompressionStatus::compressed && within_budget) {
        r.report.add(grounding_entry(a.grounding.epsilon, a.mu));
        InvariantEntry speed = check_speed(r.trace);
        const InvariantEntry speed2 = check_speed(*r.residual);
        if (speed2.measured > speed.measured) speed.measured = speed2.measured;
        speed.pass = speed.measured <= speed.bound;
        r.report.add(speed);
        InvariantEntry norm1 = check_normality(r.trace, M, a.mu, a.smoothing);
        const InvariantEntry norm2 = check_normality(*r.residual, M, 0.0, 0.0);
        if (norm2.measured < norm1.measured) norm1.measured = norm2.measured;
        norm1.pass = norm1.pass && norm2.pass;
        r.report.add(norm1);
        InvariantEntry disp = check_displacement(r.trace, cfg.epsilon_budget);
        disp.measured = r.max_displacement;  // composite over both stages
        disp.pass = disp.measured < disp.bound;
        r.report.add(disp);
        r.report.add(check_immersion(r.final_manifold, cfg.immersion_tol));
        finish_result(r, M, cfg, x0, a.nu);
        return r;
      }
      if (round == cfg.max_refinements) {
        if (r.status == CompressionStatus::compressed && !within_budget) {
          r.status = CompressionStatus::not_converged;
          r.error_code = "budget_exceeded";
          r.message = "measured displacement " +
                      std::to_string(r.max_displacement) +
                      " exceeds the budget " +
                      std::to_string(cfg.epsilon_budget) + " at nu = " +
                      std::to_string(nu_r) +
                      "; a denser sampling would be needed";
        }
        r.report.add(grounding_entry(a.grounding.epsilon, a.mu));
        InvariantEntry disp = check_displacement(r.trace, cfg.epsilon_budget);
        disp.measured = r.max_displacement;
        disp.pass = disp.measured < disp.bound;
        r.report.add(disp);
        finish_result(r, M, cfg, x0, a.nu);
        return r;
      }
    }
    throw PreconditionFailed("unreachable refinement exit");
  } catch (const Error& e) {
    return from_error(M, alpha, e);
  }
}

CompressionResult compress_multi(const EmbeddedManifold& M,
                                 const NormalFrame& frame,
                                 const CompressionConfig& cfg) {
  if (frame.k() == 1) return compress_local(M, frame, cfg);
  const std::vector<Vec> x0 = M.positions();
  try {
    const int n_axes = M.split().n;
    const int q = M.split().q;
    const int kf = frame.k();
    if (kf != n_axes)
      throw PreconditionFailed("need exactly one field per vertical axis: " +
                               std::to_string(kf) + " fields, " +
                               std::to_string(n_axes) + " axes");
    if (flat_codim(M) < 1)
      throw PreconditionFailed("multi-compression needs flat codimension >= 1");
    if (frame.sample_count() != M.sample_count())
      throw PreconditionFailed("field sample count differs from the manifold");

    const int ns = M.sample_count();
    // work_fields[i][j]: field j at sample i, in the current working space.
    std::vector<std::vector<Vec>> work_fields(ns);
    for (int i = 0; i < ns; ++i) work_fields[i] = frame.fields[i];

    std::vector<Vec> positions = M.positions();
    std::vector<std::vector<double>> axis_coords(n_axes,
                                                 std::vector<double>(ns, 0.0));
    std::vector<std::vector<Vec>> axis_fields(n_axes);  // end-of-pass carried
    CompressionResult r;
    r.params.epsilon_budget = cfg.epsilon_budget;

    for (int k = n_axes - 1; k >= 0; --k) {
      const AmbientSplit split_k{q, k + 1, k};
      EmbeddedManifold Wk =
          M.m() == 1 ? EmbeddedManifold(split_k, positions, M.components())
                     : EmbeddedManifold(split_k, positions, M.grid_nu(),
                                        M.grid_nv());
      Wk.set_boundary_flags(M.boundary_flags());

      NormalFrame frame_k;
      frame_k.fields.resize(ns);
      for (int i = 0; i < ns; ++i) {
        frame_k.fields[i].push_back(work_fields[i][k]);
        for (int j = 0; j < k; ++j)
          frame_k.fields[i].push_back(work_fields[i][j]);
      }

      CompressionConfig cfg_k = cfg;
      cfg_k.epsilon_budget =
          cfg.epsilon_budget > 0.0 ? cfg.epsilon_budget : 1e30;
      cfg_k.rng_seed = cfg.rng_seed + 1000003ull * static_cast<std::uint64_t>(
                                          n_axes - 1 - k);

      CompressionResult pass = compress_local(Wk, frame_k, cfg_k);
      r.pass_traces.push_back(pass.trace);
      if (!pass.ok()) {
        pass.message = "pass for axis " + std::to_string(k) + ": " +
                       (pass.message.empty() ? pass.error_code : pass.message);
        pass.final_manifold = M;
        pass.final_frame = frame;
        pass.pass_traces = std::move(r.pass_traces);
        fill_displacement(pass, x0);
        return pass;
      }
      r.params = pass.params;  // keep the last pass's echo
      r.marking = pass.marking;
      r.trace = pass.trace;
      if (pass.residual) r.residual = pass.residual;

      const EmbeddedManifold& done = pass.final_manifold;
      for (int i = 0; i < ns; ++i)
        axis_coords[k][i] = done.position(i)[q + k];
      axis_fields[k].resize(ns);
      for (int i = 0; i < ns; ++i)
        axis_fields[k][i] = pass.final_frame.active(i);

      // Project out the straightened axis from positions and from the
      // remaining fields (dropping the coordinate and re-orthonormalising).
      positions.assign(ns, Vec());
      for (int i = 0; i < ns; ++i) {
        const Vec& p = done.position(i);
        Vec pq(q + k);
        for (int d = 0; d < q + k; ++d) pq[d] = p[d];
        positions[i] = pq;

        std::vector<Vec> kept;
        for (int j = 0; j < k; ++j) {
          const Vec& full = pass.final_frame.fields[i][1 + j];
          Vec v(q + k);
          for (int d = 0; d < q + k; ++d) v[d] = full[d];
          for (const Vec& w : kept) v -= v.dot(w) * w;
          const double nn = v.norm();
          if (nn < 1e-6)
            throw DependentField(
                "remaining fields collapse under projection at sample " +
                std::to_string(i));
          kept.push_back(v / nn);
        }
        work_fields[i] = kept;
      }
    }

    // Lift back: flattened coordinates from the last pass, straightened axis
    // coordinates as recorded at the end of their own passes.
    const AmbientSplit full_split{q, n_axes, n_axes - 1};
    std::vector<Vec> lifted(ns, Vec::Zero(q + n_axes));
    for (int i = 0; i < ns; ++i) {
      for (int d = 0; d < q; ++d) lifted[i][d] = positions[i][d];
      for (int k = 0; k < n_axes; ++k) lifted[i][q + k] = axis_coords[k][i];
    }
    r.final_manifold =
        M.m() == 1 ? EmbeddedManifold(full_split, lifted, M.components())
                   : EmbeddedManifold(full_split, lifted, M.grid_nu(),
                                      M.grid_nv());
    r.final_manifold.set_boundary_flags(M.boundary_flags());

    r.final_frame.fields.assign(ns, {});
    for (int i = 0; i < ns; ++i) {
      for (int k = 0; k < n_axes; ++k) {
        const Vec& v = axis_fields[k][i];
        Vec full = Vec::Zero(q + n_axes);
        for (int d = 0; d < v.size(); ++d) full[d] = v[d];
        r.final_frame.fields[i].push_back(full);
      }
    }
    r.status = CompressionStatus::compressed;

    // Axis alignment entries: each straightened field against its axis.
    for (int k = 0; k < n_axes; ++k) {
      InvariantEntry e;
      e.name = "axis_alignment_" + std::to_string(k);
      e.bound = 1e-2;
      e.bound_name = "max angle(final field, its axis) <= 1e-2";
      double worst = 0.0;
      for (int i = 0; i < ns; ++i) {
        Vec axis = Vec::Zero(q + n_axes);
        axis[q + k] = 1.0;
        worst = std::max(worst,
                         angle_between(r.final_frame.fields[i][k], axis));
      }
      e.measured = worst;
      e.pass = worst <= e.bound;
      r.report.add(e);
    }

    // Immersion of the fully flattened object.
    {
      InvariantEntry e;
      e.name = "immersion";
      e.bound = cfg.immersion_tol;
      e.bound_name = "min |flattened tangent| / |tangent| >= tol";
      const TangentFrame Tf = estimate_tangent_frame(r.final_manifold);
      double worst = kInf;
      for (int i = 0; i < ns; ++i) {
        for (const Vec& t : Tf.basis[i]) {
          double flat2 = 0.0;
          for (int d = 0; d < q; ++d) flat2 += t[d] * t[d];
          worst = std::min(worst, std::sqrt(flat2));
        }
      }
      e.measured = worst;
      e.pass = worst >= e.bound;
      r.report.add(e);
    }

    // The final object upstairs must still be embedded.
    {
      const ReachResult rr =
          discrete_reach_unchecked(r.final_manifold, r.params.lambda);
      InvariantEntry e;
      e.name = "embedded_final";
      e.measured = rr.min_distance;
      e.bound = 0.0;
      e.bound_name = "final samples pairwise distinct beyond locality";
      e.pass = rr.arg_i < 0 || rr.min_distance > 0.0;
      r.report.add(e);
    }

    if (cfg.epsilon_budget > 0.0) {
      InvariantEntry disp;
      disp.name = "displacement";
      disp.bound = cfg.epsilon_budget;
      disp.bound_name = "max |final - initial| < epsilon budget";
      double worst = 0.0;
      for (int i = 0; i < ns; ++i)
        worst = std::max(worst, (lifted[i] - x0[i]).norm());
      disp.measured = worst;
      disp.pass = worst < disp.bound;
      r.report.add(disp);
    }

    fill_displacement(r, x0);
    if (!cfg.relative_region.empty())
      r.report.add(relative_entry(r, cfg.relative_region));

    // Census of the fully flattened curve.
    if (M.m() == 1 && q == 2) {
      const EmbeddedManifold flatQ =
          EmbeddedManifold(AmbientSplit{2, 0, 0}, positions, M.components());
      r.census = count_double_points(flatQ, cfg.transverse_tol, 0.0);
      if (!r.census.points.empty())
        r.report.add(transversality_entry(r.census, cfg.transverse_tol));
    }

    if (!r.report.overall()) {
      r.status = CompressionStatus::not_converged;
      r.error_code = "invariant_failed";
      r.message = "all passes converged but a checked bound failed";
    }
    return r;
  } catch (const Error& e) {
    return from_error(M, frame, e);
  }
}

}  // namespace straightflow

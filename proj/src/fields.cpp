#include "straightflow/fields.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "straightflow/detail/smooth.hpp"

namespace straightflow {

using detail::angle_between;
using detail::rotate_toward;
using detail::smooth_clamp;
using detail::smooth_step;

namespace {

/// Rotation taking unit `a` to unit `b` inside span(a, b), identity on the
/// orthogonal complement, applied to v. Falls back to identity when a == b
/// and to DependentField when a == -b (no canonical plane).
Vec plane_rotation_apply(const Vec& a, const Vec& b, const Vec& v) {
  const double c = detail::clamp_unit(a.dot(b));
  if (c > 1.0 - 1e-15) return v;
  if (c < -1.0 + 1e-12)
    throw DependentField("plane rotation undefined for antipodal pair");
  Vec f = b - c * a;
  f /= f.norm();
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  const double ve = v.dot(a);
  const double vf = v.dot(f);
  return v + ve * ((c - 1.0) * a + s * f) + vf * (-s * a + (c - 1.0) * f);
}

}  // namespace

Vec transport_by_rotation(const Vec& from, const Vec& to, const Vec& v) {
  return plane_rotation_apply(from, to, v);
}

namespace {

/// Rotate the active field of sample entry `fs` to `target` and drag the
/// passenger fields by the same rotation.
void set_active_with_drag(std::vector<Vec>& fs, const Vec& target) {
  for (size_t j = 1; j < fs.size(); ++j)
    fs[j] = plane_rotation_apply(fs[0], target, fs[j]);
  fs[0] = target;
}

/// Multi-source BFS hop distance, capped at `cells`.
std::vector<int> dilate(const EmbeddedManifold& M, const std::vector<int>& seeds,
                        int cells) {
  std::vector<int> depth(M.sample_count(), -1);
  std::deque<int> q;
  for (int s : seeds) {
    if (depth[s] == -1) {
      depth[s] = 0;
      q.push_back(s);
    }
  }
  std::vector<int> out;
  while (!q.empty()) {
    const int v = q.front();
    q.pop_front();
    out.push_back(v);
    if (depth[v] == cells) continue;
    for (int w : M.neighbors(v)) {
      if (depth[w] == -1) {
        depth[w] = depth[v] + 1;
        q.push_back(w);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

NormalFrame NormalFrame::single(std::vector<Vec> field) {
  NormalFrame F;
  F.fields.reserve(field.size());
  for (Vec& v : field) F.fields.push_back({std::move(v)});
  return F;
}

void validate_normal_frame(const EmbeddedManifold& M, const TangentFrame& T,
                           const NormalFrame& F, double unit_tol,
                           double independence_tol) {
  const int dim = M.split().dim();
  const int m = T.m();
  const int k = F.k();
  Eigen::MatrixXd A(dim, m + k);
  for (int i = 0; i < M.sample_count(); ++i) {
    for (int j = 0; j < k; ++j) {
      const double len = F.fields[i][j].norm();
      if (std::abs(len - 1.0) > unit_tol)
        throw DependentField("field " + std::to_string(j) + " at sample " +
                             std::to_string(i) + " is not unit length");
    }
    for (int j = 0; j < m; ++j) A.col(j) = T.basis[i][j];
    for (int j = 0; j < k; ++j) A.col(m + j) = F.fields[i][j];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const double sigma = svd.singularValues().minCoeff();
    if (sigma <= independence_tol)
      throw DependentField("fields dependent with tangent space at sample " +
                           std::to_string(i) + " (sigma_min = " +
                           std::to_string(sigma) + ")");
  }
}

double max_tangential_component(const TangentFrame& T, const NormalFrame& F) {
  double worst = 0.0;
  for (int i = 0; i < F.sample_count(); ++i)
    for (const Vec& t : T.basis[i])
      worst = std::max(worst, std::abs(t.dot(F.active(i))));
  return worst;
}

NormalFrame perpendicularize(const EmbeddedManifold& M, const TangentFrame& T,
                             const NormalFrame& F, double independence_tol) {
  NormalFrame out = F;
  for (int i = 0; i < M.sample_count(); ++i) {
    for (int j = 0; j < out.k(); ++j) {
      Vec r = T.reject(i, out.fields[i][j]);
      const double n = r.norm();
      if (n < 1e-9)
        throw DependentField("field " + std::to_string(j) +
                             " tangent to M at sample " + std::to_string(i));
      out.fields[i][j] = r / n;
    }
  }
  out.perpendicular = true;
  validate_normal_frame(M, T, out, 1e-9, independence_tol);
  return out;
}

GroundingReport measure_grounding(const EmbeddedManifold& M, const NormalFrame& F) {
  const Vec down = -M.split().vertical_unit();
  GroundingReport rep;
  rep.epsilon = kInf;
  for (int i = 0; i < F.sample_count(); ++i) {
    const double a = angle_between(F.active(i), down);
    if (a < rep.epsilon) {
      rep.epsilon = a;
      rep.argmin = i;
    }
  }
  return rep;
}

NormalFrame upwards_rotate(const EmbeddedManifold& M, const NormalFrame& F,
                           double mu, double smoothing) {
  const GroundingReport g = measure_grounding(M, F);
  if (!(mu > 0.0) || !(mu < g.epsilon))
    throw NotGrounded("need 0 < mu < grounding angle; mu = " + std::to_string(mu) +
                      ", epsilon = " + std::to_string(g.epsilon));
  const Vec u = M.split().vertical_unit();
  const double full = M_PI / 2.0 - mu;
  NormalFrame out = F;
  for (int i = 0; i < out.sample_count(); ++i) {
    const double theta = angle_between(out.active(i), u);
    if (theta < 1e-15) continue;  // already vertical
    const double r = smooth_clamp(theta, full, smoothing);
    if (r <= 0.0) continue;
    // r == theta means "rotate the whole way": snap to the vertical unit so
    // the sample's foot goes exactly inactive downstream.
    const Vec beta = r >= theta ? u : rotate_toward(out.active(i), u, r);
    set_active_with_drag(out.fields[i], beta);
  }
  return out;
}

std::vector<Vec> gradient_field(const EmbeddedManifold& M, const TangentFrame& T) {
  const Vec u = M.split().vertical_unit();
  std::vector<Vec> phi(M.sample_count());
  for (int i = 0; i < M.sample_count(); ++i) phi[i] = T.project(i, u);
  return phi;
}

std::vector<int> horizontal_set(const EmbeddedManifold& M, const TangentFrame& T,
                                double angle_tol) {
  const Vec u = M.split().vertical_unit();
  const double threshold = std::cos(angle_tol);
  std::vector<int> out;
  for (int i = 0; i < M.sample_count(); ++i)
    if (T.project(i, u).norm() >= threshold) out.push_back(i);
  return out;
}

std::vector<std::optional<Vec>> upmost_field(const EmbeddedManifold& M,
                                             const TangentFrame& T) {
  const Vec u = M.split().vertical_unit();
  std::vector<std::optional<Vec>> psi(M.sample_count());
  for (int i = 0; i < M.sample_count(); ++i) {
    Vec r = T.reject(i, u);
    const double n = r.norm();
    if (n >= 1e-9) psi[i] = Vec(r / n);
  }
  return psi;
}

std::vector<int> SubsetMarking::with(std::uint8_t bit) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(marks.size()); ++i)
    if (marks[i] & bit) out.push_back(i);
  return out;
}

int SubsetMarking::count(std::uint8_t bit) const {
  int c = 0;
  for (std::uint8_t m : marks) c += (m & bit) ? 1 : 0;
  return c;
}

void SubsetMarking::validate() const {
  for (size_t i = 0; i < marks.size(); ++i) {
    const std::uint8_t m = marks[i];
    if ((m & UPrime) && !(m & U))
      throw std::logic_error("marking: U' sample outside U");
    if ((m & H) && !(m & UPrime))
      throw std::logic_error("marking: H sample outside U'");
    if ((m & D) && !(m & U) && !(m & V))
      throw std::logic_error("marking: downset sample outside U not covered by V");
  }
}

SubsetMarking mark_subsets(const EmbeddedManifold& M, const TangentFrame& T,
                           const NormalFrame& F, const MarkingConfig& cfg) {
  SubsetMarking mk;
  mk.marks.assign(M.sample_count(), 0);

  const std::vector<int> hs = horizontal_set(M, T, cfg.h_tol);
  for (int i : hs) mk.add(i, SubsetMarking::H);
  if (!hs.empty()) {
    for (int i : dilate(M, hs, cfg.u_prime_cells)) mk.add(i, SubsetMarking::UPrime);
    for (int i : dilate(M, hs, cfg.u_cells)) mk.add(i, SubsetMarking::U);
  }

  const auto psi = upmost_field(M, T);
  std::vector<int> core;
  for (int i = 0; i < M.sample_count(); ++i) {
    if (mk.has(i, SubsetMarking::UPrime)) continue;  // frontier belongs to H
    if (!psi[i]) continue;
    if (angle_between(F.active(i), Vec(-*psi[i])) <= cfg.d_tol) {
      mk.add(i, SubsetMarking::D);
      if (!mk.has(i, SubsetMarking::UPrime)) core.push_back(i);
    }
  }
  if (!core.empty())
    for (int i : dilate(M, core, cfg.v_cells)) mk.add(i, SubsetMarking::V);
  mk.validate();
  return mk;
}

NormalFrame localise(const EmbeddedManifold& M, const TangentFrame& T,
                     const NormalFrame& F, const SubsetMarking& marking,
                     int collar_cells, double antipodal_tol) {
  const auto psi = upmost_field(M, T);
  const int n = M.sample_count();

  // Hop depth inside W = U union V, measured from the complement of W.
  std::vector<int> depth(n, -1);
  std::deque<int> q;
  for (int i = 0; i < n; ++i) {
    if (!marking.has(i, SubsetMarking::U) && !marking.has(i, SubsetMarking::V)) {
      depth[i] = 0;
      q.push_back(i);
    }
  }
  while (!q.empty()) {
    const int v = q.front();
    q.pop_front();
    for (int w : M.neighbors(v)) {
      if (depth[w] == -1) {
        depth[w] = depth[v] + 1;
        q.push_back(w);
      }
    }
  }

  NormalFrame out = F;
  for (int i = 0; i < n; ++i) {
    if (depth[i] < 0 || depth[i] > collar_cells) continue;  // deep inside W
    if (!psi[i])
      throw DependentField("upmost field undefined outside W at sample " +
                           std::to_string(i) + "; widen U around the horizontal set");
    if (depth[i] == 0) {
      set_active_with_drag(out.fields[i], *psi[i]);
      continue;
    }
    const double ang = angle_between(out.active(i), Vec(-*psi[i]));
    if (ang < antipodal_tol)
      throw AntipodalCollar("collar sample " + std::to_string(i) +
                            " antipodal to upmost field; widen V");
    const double t = static_cast<double>(depth[i]) / (collar_cells + 1);
    const Vec target = detail::slerp(*psi[i], out.active(i), t, antipodal_tol);
    set_active_with_drag(out.fields[i], target);
  }
  return out;
}

std::vector<double> gradient_components_in_V(const EmbeddedManifold& M,
                                             const TangentFrame& T,
                                             const SubsetMarking& marking) {
  const std::vector<Vec> phi = gradient_field(M, T);
  const int n = M.sample_count();
  std::vector<char> in_v(n, 0), claimed(n, 0);
  for (int i = 0; i < n; ++i) in_v[i] = marking.has(i, SubsetMarking::V) ? 1 : 0;

  // Discrete integral-curve hop: follow the neighbour best aligned with the
  // gradient direction; a component is the maximal chain staying inside V.
  auto step = [&](int cur, double dir) -> int {
    const Vec& g = phi[cur];
    if (g.norm() < 1e-9) return -1;
    int best = -1;
    double best_dot = 0.0;
    for (int nb : M.neighbors(cur)) {
      Vec e = M.position(nb) - M.position(cur);
      const double d = dir * e.normalized().dot(g.normalized());
      if (d > best_dot) {
        best_dot = d;
        best = nb;
      }
    }
    return best;
  };

  std::vector<double> lengths;
  for (int seed = 0; seed < n; ++seed) {
    if (!in_v[seed] || claimed[seed]) continue;
    claimed[seed] = 1;
    double len = 0.0;
    for (double dir : {1.0, -1.0}) {
      int cur = seed;
      while (true) {
        const int nxt = step(cur, dir);
        if (nxt < 0 || !in_v[nxt] || claimed[nxt]) break;
        claimed[nxt] = 1;
        len += (M.position(nxt) - M.position(cur)).norm();
        cur = nxt;
      }
    }
    lengths.push_back(len);
  }
  return lengths;
}

PerturbResult perturb_general_position(const EmbeddedManifold& M,
                                       const TangentFrame& T, const NormalFrame& F,
                                       const MarkingConfig& cfg, double delta,
                                       double perturb_angle, std::uint64_t seed,
                                       int max_rounds) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int dim = M.split().dim();

  NormalFrame cur = F;
  for (int round = 0; round <= max_rounds; ++round) {
    SubsetMarking mk = mark_subsets(M, T, cur, cfg);
    const std::vector<double> comps = gradient_components_in_V(M, T, mk);
    double worst = 0.0;
    for (double c : comps) worst = std::max(worst, c);
    if (worst < delta)
      return PerturbResult{std::move(cur), std::move(mk), round, worst};
    if (round == max_rounds)
      throw GeneralPositionFailed(
          "integral-curve component of length " + std::to_string(worst) +
          " >= delta = " + std::to_string(delta) + " after " +
          std::to_string(max_rounds) + " perturbation rounds");

    // Perturb the active field near the downset core, inside the normal space.
    std::vector<int> core = mk.with(SubsetMarking::D);
    std::vector<int> region = core.empty() ? mk.with(SubsetMarking::V)
                                           : dilate(M, core, 1);
    for (int i : region) {
      Vec w(dim);
      for (int t = 0; t < 8; ++t) {
        for (int c = 0; c < dim; ++c) w[c] = 2.0 * u01(rng) - 1.0;
        w = T.reject(i, w);
        w -= w.dot(cur.active(i)) * cur.active(i);
        if (w.norm() > 1e-6) break;
      }
      const double nw = w.norm();
      if (nw < 1e-12) continue;  // no normal room to perturb at this sample
      w /= nw;
      const double ang = perturb_angle * (0.25 + 0.75 * u01(rng));
      const Vec target = std::cos(ang) * cur.active(i) + std::sin(ang) * w;
      set_active_with_drag(cur.fields[i], target);
    }
  }
  throw GeneralPositionFailed("unreachable");
}

AmbientField::AmbientField(const EmbeddedManifold& M, const NormalFrame& beta,
                           const TubularNeighbourhood& N, double ambiguous_tol)
    : u_(M.split().vertical_unit()),
      nu_(N.radius),
      lambda_(N.locality),
      ambiguous_tol_(ambiguous_tol) {
  if (!(nu_ > 0.0)) throw std::invalid_argument("AmbientField: nu must be > 0");
  const int n = M.sample_count();
  feet_.reserve(n);
  beta_.reserve(n);
  for (int i = 0; i < n; ++i) {
    feet_.push_back(M.position(i));
    beta_.push_back(beta.active(i));
    if ((beta.active(i) - u_).norm() > 1e-12) active_.push_back(i);
  }
  any_active_ = !active_.empty();

  all_ids_.resize(n);
  for (int i = 0; i < n; ++i) all_ids_[i] = i;

  if (any_active_) {
    Vec alo = feet_[active_[0]], ahi = feet_[active_[0]];
    for (int i : active_) {
      alo = alo.cwiseMin(feet_[i]);
      ahi = ahi.cwiseMax(feet_[i]);
    }
    active_lo_ = alo.array() - nu_;
    active_hi_ = ahi.array() + nu_;
    freeze_height_ = active_hi_[M.split().vertical_index()];
  }

  // The ambiguity gate compares intrinsic distances between near-equidistant
  // feet; keep a snapshot of the owner so later motion cannot skew it.
  owner_skeleton_ = std::make_shared<EmbeddedManifold>(M);
}

void AmbientField::prepare_anchors(const EmbeddedManifold& M) {
  const int n = M.sample_count();
  balls_.resize(n);
  for (int i = 0; i < n; ++i) balls_[i] = M.intrinsic_ball(i, lambda_);
}

Vec AmbientField::eval_candidates(const Vec& x, const std::vector<int>& candidates,
                                  bool check_ambiguity) const {
  double d1 = kInf, d2 = kInf;
  int b1 = -1, b2 = -1;
  for (int i : candidates) {
    const double d = (x - feet_[i]).squaredNorm();
    if (d < d1) {
      d2 = d1;
      b2 = b1;
      d1 = d;
      b1 = i;
    } else if (d < d2) {
      d2 = d;
      b2 = i;
    }
  }
  if (b1 < 0) return u_;
  const double dist = std::sqrt(d1);
  if (dist >= nu_) return u_;
  if (check_ambiguity && b2 >= 0 && ambiguous_tol_ > 0.0) {
    const double dist2 = std::sqrt(d2);
    if (dist2 - dist < ambiguous_tol_ &&
        owner_skeleton_->intrinsic_distance(b1, b2) > lambda_)
      throw AmbiguousFoot("ambient point equidistant from distant samples " +
                          std::to_string(b1) + " and " + std::to_string(b2));
  }
  const Vec& b = beta_[b1];
  const double theta = angle_between(b, u_);
  if (theta < 1e-15) return u_;
  const double s = smooth_step(dist / nu_);
  if (s <= 0.0) return b;
  if (s >= 1.0) return u_;
  return rotate_toward(b, u_, s * theta);
}

namespace {
inline bool inside_box(const Vec& x, const Vec& lo, const Vec& hi) {
  for (int i = 0; i < x.size(); ++i)
    if (x[i] < lo[i] || x[i] > hi[i]) return false;
  return true;
}
}  // namespace

Vec AmbientField::eval(const Vec& x) const {
  // The result can differ from vertical only when the nearest foot overall is
  // an active sample within nu, so distance to the active set gates the scan.
  if (!any_active_) return u_;
  if (!inside_box(x, active_lo_, active_hi_)) return u_;
  double besta = kInf;
  for (int i : active_) besta = std::min(besta, (x - feet_[i]).squaredNorm());
  if (besta >= nu_ * nu_) return u_;
  return eval_candidates(x, all_ids_, true);
}

Vec AmbientField::eval_anchored(const Vec& x, int anchor) const {
  if (balls_.empty())
    throw std::logic_error("AmbientField: prepare_anchors not called");
  return eval_candidates(x, balls_[anchor], false);
}

AmbientField globalize(const EmbeddedManifold& M, const NormalFrame& beta,
                       const TubularNeighbourhood& N, double ambiguous_tol) {
  const double tol = ambiguous_tol > 0.0 ? ambiguous_tol : 1e-9 * N.radius;
  return AmbientField(M, beta, N, tol);
}

}  // namespace straightflow

#include "straightflow/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

namespace straightflow {

namespace {

void check_positions(const AmbientSplit& split, const std::vector<Vec>& positions) {
  for (const Vec& p : positions) {
    if (p.size() != split.dim())
      throw std::invalid_argument("EmbeddedManifold: sample dimension mismatch");
  }
}

}  // namespace

EmbeddedManifold::EmbeddedManifold(AmbientSplit split, std::vector<Vec> positions,
                                   std::vector<Component> components)
    : m_(1), split_(split), positions_(std::move(positions)),
      components_(std::move(components)) {
  check_positions(split_, positions_);
  int covered = 0;
  for (const Component& c : components_) {
    if (c.start != covered || c.count < 2)
      throw std::invalid_argument("EmbeddedManifold: bad component layout");
    covered += c.count;
  }
  if (covered != sample_count())
    throw std::invalid_argument("EmbeddedManifold: components do not tile samples");
  boundary_.assign(sample_count(), 0);
  for (const Component& c : components_) {
    if (!c.closed) {
      boundary_[c.start] = 1;
      boundary_[c.start + c.count - 1] = 1;
    }
  }
  build_adjacency();
  compute_edges();
  // Prefix arc length per component, used by intrinsic_distance.
  arclen_.assign(sample_count(), 0.0);
  for (const Component& c : components_) {
    for (int i = 1; i < c.count; ++i) {
      const int id = c.start + i;
      arclen_[id] = arclen_[id - 1] + (positions_[id] - positions_[id - 1]).norm();
    }
  }
}

EmbeddedManifold::EmbeddedManifold(AmbientSplit split, std::vector<Vec> positions,
                                   int nu, int nv)
    : m_(2), split_(split), positions_(std::move(positions)), nu_(nu), nv_(nv) {
  check_positions(split_, positions_);
  if (nu_ < 2 || nv_ < 2 || nu_ * nv_ != sample_count())
    throw std::invalid_argument("EmbeddedManifold: bad grid shape");
  boundary_.assign(sample_count(), 0);
  for (int iu = 0; iu < nu_; ++iu)
    for (int iv = 0; iv < nv_; ++iv)
      if (iu == 0 || iv == 0 || iu == nu_ - 1 || iv == nv_ - 1)
        boundary_[grid_id(iu, iv)] = 1;
  build_adjacency();
  compute_edges();
}

void EmbeddedManifold::set_boundary_flags(std::vector<char> flags) {
  if (static_cast<int>(flags.size()) != sample_count())
    throw std::invalid_argument("EmbeddedManifold: boundary flag count mismatch");
  boundary_ = std::move(flags);
}

void EmbeddedManifold::build_adjacency() {
  adjacency_.assign(sample_count(), {});
  if (m_ == 1) {
    for (const Component& c : components_) {
      for (int i = 0; i + 1 < c.count; ++i) {
        adjacency_[c.start + i].push_back(c.start + i + 1);
        adjacency_[c.start + i + 1].push_back(c.start + i);
      }
      if (c.closed && c.count > 2) {
        adjacency_[c.start].push_back(c.start + c.count - 1);
        adjacency_[c.start + c.count - 1].push_back(c.start);
      }
    }
  } else {
    for (int iu = 0; iu < nu_; ++iu) {
      for (int iv = 0; iv < nv_; ++iv) {
        const int id = grid_id(iu, iv);
        if (iu + 1 < nu_) {
          adjacency_[id].push_back(grid_id(iu + 1, iv));
          adjacency_[grid_id(iu + 1, iv)].push_back(id);
        }
        if (iv + 1 < nv_) {
          adjacency_[id].push_back(grid_id(iu, iv + 1));
          adjacency_[grid_id(iu, iv + 1)].push_back(id);
        }
      }
    }
  }
}

void EmbeddedManifold::compute_edges() {
  max_edge_ = 0.0;
  min_edge_ = kInf;
  for (int i = 0; i < sample_count(); ++i) {
    for (int j : adjacency_[i]) {
      if (j < i) continue;
      const double d = (positions_[i] - positions_[j]).norm();
      max_edge_ = std::max(max_edge_, d);
      min_edge_ = std::min(min_edge_, d);
    }
  }
}

bool EmbeddedManifold::adjacent(int i, int j) const {
  const auto& a = adjacency_[i];
  return std::find(a.begin(), a.end(), j) != a.end();
}

std::pair<int, int> EmbeddedManifold::param_coords(int i) const {
  if (m_ == 1) {
    for (int ci = 0; ci < static_cast<int>(components_.size()); ++ci) {
      const Component& c = components_[ci];
      if (i >= c.start && i < c.start + c.count) return {ci, i - c.start};
    }
    throw std::logic_error("param_coords: sample out of range");
  }
  return {i / nv_, i % nv_};
}

double EmbeddedManifold::height_span() const {
  double lo = kInf, hi = -kInf;
  for (const Vec& p : positions_) {
    const double h = split_.height(p);
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  return hi - lo;
}

void EmbeddedManifold::bounding_box(Vec& lo, Vec& hi) const {
  lo = positions_[0];
  hi = positions_[0];
  for (const Vec& p : positions_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
}

double EmbeddedManifold::intrinsic_distance(int i, int j) const {
  if (i == j) return 0.0;
  if (m_ == 1) {
    const auto [ci, ii] = param_coords(i);
    const auto [cj, jj] = param_coords(j);
    if (ci != cj) return kInf;
    const Component& c = components_[ci];
    double d = std::abs(arclen_[i] - arclen_[j]);
    if (c.closed) {
      const int last = c.start + c.count - 1;
      const double ring = arclen_[last] +
                          (positions_[last] - positions_[c.start]).norm();
      d = std::min(d, ring - d);
    }
    return d;
  }
  // Grid: Dijkstra restricted to the two samples' shared component (grids are
  // single-component, so plain Dijkstra from i).
  std::vector<double> dist(sample_count(), kInf);
  using Node = std::pair<double, int>;
  std::priority_queue<Node, std::vector<Node>, std::greater<Node>> pq;
  dist[i] = 0.0;
  pq.push({0.0, i});
  while (!pq.empty()) {
    auto [d, v] = pq.top();
    pq.pop();
    if (d > dist[v]) continue;
    if (v == j) return d;
    for (int w : adjacency_[v]) {
      const double nd = d + (positions_[v] - positions_[w]).norm();
      if (nd < dist[w]) {
        dist[w] = nd;
        pq.push({nd, w});
      }
    }
  }
  return dist[j];
}

std::vector<int> EmbeddedManifold::intrinsic_ball(int i, double lambda) const {
  std::vector<int> out;
  if (m_ == 1) {
    for (int j = 0; j < sample_count(); ++j)
      if (intrinsic_distance(i, j) <= lambda) out.push_back(j);
    return out;
  }
  // Truncated Dijkstra.
  std::vector<double> dist(sample_count(), kInf);
  using Node = std::pair<double, int>;
  std::priority_queue<Node, std::vector<Node>, std::greater<Node>> pq;
  dist[i] = 0.0;
  pq.push({0.0, i});
  while (!pq.empty()) {
    auto [d, v] = pq.top();
    pq.pop();
    if (d > dist[v]) continue;
    for (int w : adjacency_[v]) {
      const double nd = d + (positions_[v] - positions_[w]).norm();
      if (nd <= lambda && nd < dist[w]) {
        dist[w] = nd;
        pq.push({nd, w});
      }
    }
  }
  for (int j = 0; j < sample_count(); ++j)
    if (dist[j] <= lambda) out.push_back(j);
  return out;
}

Vec TangentFrame::project(int i, const Vec& v) const {
  Vec out = Vec::Zero(v.size());
  for (const Vec& t : basis[i]) out += t.dot(v) * t;
  return out;
}

Vec TangentFrame::reject(int i, const Vec& v) const {
  Vec out = v;
  for (const Vec& t : basis[i]) out -= t.dot(v) * t;
  return out;
}

namespace {

Vec normalized_or_throw(const Vec& v, int sample) {
  const double n = v.norm();
  if (n < 1e-14)
    throw DegenerateSample("coincident samples near sample " + std::to_string(sample));
  return v / n;
}

}  // namespace

TangentFrame estimate_tangent_frame(const EmbeddedManifold& M) {
  TangentFrame F;
  F.basis.resize(M.sample_count());
  const auto& P = M.positions();
  if (M.m() == 1) {
    for (const Component& c : M.components()) {
      if (c.count < 2) throw DegenerateSample("component with fewer than 2 samples");
      for (int k = 0; k < c.count; ++k) {
        const int id = c.start + k;
        Vec diff;
        if (c.count == 2) {
          diff = P[c.start + 1] - P[c.start];
        } else if (c.closed) {
          const int prev = c.start + (k - 1 + c.count) % c.count;
          const int next = c.start + (k + 1) % c.count;
          diff = P[next] - P[prev];
        } else if (k == 0) {
          diff = P[id + 1] - P[id];
        } else if (k == c.count - 1) {
          diff = P[id] - P[id - 1];
        } else {
          diff = P[id + 1] - P[id - 1];
        }
        F.basis[id] = {normalized_or_throw(diff, id)};
      }
    }
    return F;
  }
  const int nu = M.grid_nu(), nv = M.grid_nv();
  auto diff_along = [&](int iu, int iv, bool along_u) {
    const int n = along_u ? nu : nv;
    const int k = along_u ? iu : iv;
    auto at = [&](int kk) {
      return along_u ? P[M.grid_id(kk, iv)] : P[M.grid_id(iu, kk)];
    };
    if (k == 0) return Vec(at(1) - at(0));
    if (k == n - 1) return Vec(at(n - 1) - at(n - 2));
    return Vec(at(k + 1) - at(k - 1));
  };
  for (int iu = 0; iu < nu; ++iu) {
    for (int iv = 0; iv < nv; ++iv) {
      const int id = M.grid_id(iu, iv);
      const Vec t1 = normalized_or_throw(diff_along(iu, iv, true), id);
      Vec d2 = diff_along(iu, iv, false);
      d2 -= d2.dot(t1) * t1;
      const Vec t2 = normalized_or_throw(d2, id);
      F.basis[id] = {t1, t2};
    }
  }
  return F;
}

ReachResult discrete_reach_unchecked(const EmbeddedManifold& M, double lambda) {
  ReachResult r;
  const int n = M.sample_count();
  // Sample ids within lambda of i are excluded from the scan; precompute the
  // exclusion sets once (cheap for polylines, truncated Dijkstra for grids).
  std::vector<std::vector<int>> near(n);
  for (int i = 0; i < n; ++i) near[i] = M.intrinsic_ball(i, lambda);
  for (int i = 0; i < n; ++i) {
    const auto& ex = near[i];
    size_t cursor = 0;
    for (int j = i + 1; j < n; ++j) {
      while (cursor < ex.size() && ex[cursor] < j) ++cursor;
      if (cursor < ex.size() && ex[cursor] == j) continue;
      const double d = (M.position(i) - M.position(j)).norm();
      if (d < r.min_distance) {
        r.min_distance = d;
        r.arg_i = i;
        r.arg_j = j;
      }
    }
  }
  r.reach = r.min_distance / 2.0;
  return r;
}

ReachResult discrete_reach(const EmbeddedManifold& M, double lambda,
                           double self_intersection_tol) {
  ReachResult r = discrete_reach_unchecked(M, lambda);
  if (r.min_distance < self_intersection_tol)
    throw SelfIntersection(
        "samples " + std::to_string(r.arg_i) + " and " + std::to_string(r.arg_j) +
        " at distance " + std::to_string(r.min_distance) +
        " below tolerance " + std::to_string(self_intersection_tol));
  return r;
}

EmbeddedManifold project_to_Q(const EmbeddedManifold& M) {
  const AmbientSplit& s = M.split();
  if (!s.has_vertical())
    throw std::logic_error("project_to_Q: no vertical factor to drop");
  const int drop = s.vertical_index();
  std::vector<Vec> out;
  out.reserve(M.sample_count());
  for (const Vec& p : M.positions()) {
    Vec v(p.size() - 1);
    int w = 0;
    for (int k = 0; k < p.size(); ++k)
      if (k != drop) v[w++] = p[k];
    out.push_back(v);
  }
  const AmbientSplit ns(s.q, s.n - 1, 0);
  EmbeddedManifold R = M.m() == 1
      ? EmbeddedManifold(ns, std::move(out), M.components())
      : EmbeddedManifold(ns, std::move(out), M.grid_nu(), M.grid_nv());
  R.set_boundary_flags(M.boundary_flags());
  return R;
}

EmbeddedManifold embed_at_height(const EmbeddedManifold& M, double height) {
  const AmbientSplit& s = M.split();
  std::vector<Vec> out;
  out.reserve(M.sample_count());
  for (const Vec& p : M.positions()) {
    Vec v(p.size() + 1);
    v.head(p.size()) = p;
    v[p.size()] = height;
    out.push_back(v);
  }
  const AmbientSplit ns(s.q, s.n + 1, s.n);
  EmbeddedManifold R = M.m() == 1
      ? EmbeddedManifold(ns, std::move(out), M.components())
      : EmbeddedManifold(ns, std::move(out), M.grid_nu(), M.grid_nv());
  R.set_boundary_flags(M.boundary_flags());
  return R;
}

}  // namespace straightflow

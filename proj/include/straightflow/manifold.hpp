#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "straightflow/errors.hpp"
#include "straightflow/split.hpp"

namespace straightflow {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// One polyline piece of a 1-dimensional manifold.
struct Component {
  int start = 0;   // first sample id
  int count = 0;   // number of samples
  bool closed = false;
};

/// Sampled m-manifold (m = 1 or 2) inside Q^q x R^n.
///
/// m = 1: one or more polyline components, each open or closed.
/// m = 2: a single open rectangular grid, row-major, id = iu * nv + iv.
///
/// Adjacency is implicit (consecutive samples / 4-neighbour grid). Intrinsic
/// distance is arc length along the polyline (m = 1) or shortest-path length
/// through grid edges (m = 2).
class EmbeddedManifold {
 public:
  EmbeddedManifold() = default;

  /// Polyline constructor. `components` must tile [0, positions.size()).
  EmbeddedManifold(AmbientSplit split, std::vector<Vec> positions,
                   std::vector<Component> components);

  /// Grid constructor.
  EmbeddedManifold(AmbientSplit split, std::vector<Vec> positions, int nu, int nv);

  int m() const { return m_; }
  int sample_count() const { return static_cast<int>(positions_.size()); }
  const AmbientSplit& split() const { return split_; }
  const std::vector<Vec>& positions() const { return positions_; }
  const Vec& position(int i) const { return positions_[i]; }
  Vec& position(int i) { return positions_[i]; }
  void set_position(int i, const Vec& p) { positions_[i] = p; }

  const std::vector<Component>& components() const { return components_; }
  int grid_nu() const { return nu_; }
  int grid_nv() const { return nv_; }
  int grid_id(int iu, int iv) const { return iu * nv_ + iv; }

  bool boundary(int i) const { return boundary_[i]; }
  const std::vector<char>& boundary_flags() const { return boundary_; }
  void set_boundary_flags(std::vector<char> flags);

  /// Neighbour sample ids (2 for polyline interior, up to 4 on grids).
  const std::vector<int>& neighbors(int i) const { return adjacency_[i]; }
  bool adjacent(int i, int j) const;

  /// Parameter coordinates of a sample: (component, index) or (iu, iv).
  std::pair<int, int> param_coords(int i) const;

  double max_edge_length() const { return max_edge_; }
  double min_edge_length() const { return min_edge_; }

  /// Height span along the active vertical axis.
  double height_span() const;

  /// Axis-aligned bounding box over all samples.
  void bounding_box(Vec& lo, Vec& hi) const;

  /// Intrinsic (along-manifold) distance between samples; kInf across
  /// components.
  double intrinsic_distance(int i, int j) const;

  /// Ids of samples at intrinsic distance <= lambda from i (includes i),
  /// sorted ascending.
  std::vector<int> intrinsic_ball(int i, double lambda) const;

 private:
  void build_adjacency();
  void compute_edges();

  int m_ = 1;
  AmbientSplit split_;
  std::vector<Vec> positions_;
  std::vector<Component> components_;
  int nu_ = 0, nv_ = 0;
  std::vector<char> boundary_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<double> arclen_;  // m=1: prefix arc length per sample
  double max_edge_ = 0.0, min_edge_ = kInf;
};

/// Per-sample orthonormal tangent basis (m vectors each).
struct TangentFrame {
  std::vector<std::vector<Vec>> basis;  // [sample][direction]

  int sample_count() const { return static_cast<int>(basis.size()); }
  int m() const { return basis.empty() ? 0 : static_cast<int>(basis[0].size()); }

  /// Project an ambient vector onto the tangent space at sample i.
  Vec project(int i, const Vec& v) const;
  /// Remove the tangential part of v at sample i.
  Vec reject(int i, const Vec& v) const;
};

/// Discrete tubular neighbourhood data: fibre radius and locality radius.
struct TubularNeighbourhood {
  double radius = 0.0;    // nu > 0, <= discrete reach for embedded owners
  double locality = 0.0;  // lambda: intrinsic radius of induced patches
};

/// Central-difference tangent estimation (one-sided at boundaries, wraparound
/// on closed components), Gram-Schmidt orthonormalised for m = 2.
/// Throws DegenerateSample when a difference vanishes.
TangentFrame estimate_tangent_frame(const EmbeddedManifold& M);

struct ReachResult {
  double reach = kInf;         // half of min distance among lambda-far pairs
  double min_distance = kInf;  // the raw minimum
  int arg_i = -1, arg_j = -1;  // minimising pair
};

/// Half the minimum Euclidean distance between samples at intrinsic distance
/// greater than lambda. Throws SelfIntersection when the raw minimum falls
/// below self_intersection_tol (the owner is treated as immersed).
ReachResult discrete_reach(const EmbeddedManifold& M, double lambda,
                           double self_intersection_tol);

/// Same scan without the SelfIntersection gate, for callers that accept
/// immersed owners.
ReachResult discrete_reach_unchecked(const EmbeddedManifold& M, double lambda);

/// Drop the active vertical coordinate from every sample. The split keeps the
/// remaining factors: (q, n) -> (q, n-1).
EmbeddedManifold project_to_Q(const EmbeddedManifold& M);

/// Append a fresh vertical factor holding `height` at every sample and make
/// it the active axis.
EmbeddedManifold embed_at_height(const EmbeddedManifold& M, double height);

}  // namespace straightflow

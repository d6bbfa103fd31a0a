#pragma once

#include <Eigen/Core>
#include <stdexcept>

namespace straightflow {

// Ambient vectors live in R^(q+n) with q <= 6, n <= 4. Fixed capacity keeps
// hot loops free of heap traffic while the dimension stays a runtime value.
inline constexpr int kMaxAmbientDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxAmbientDim, 1>;

/// Product structure Q^q x R^n of the ambient space.
///
/// Coordinates 0..q-1 span Q (horizontal), coordinates q..q+n-1 the vertical
/// factors. `vertical_axis` selects which R factor is currently "up".
/// n == 0 is allowed only for objects that have been projected into Q and are
/// no longer subject to vertical operations.
struct AmbientSplit {
  int q = 1;
  int n = 1;
  int vertical_axis = 0;

  AmbientSplit() = default;
  AmbientSplit(int q_, int n_, int vertical_axis_ = 0)
      : q(q_), n(n_), vertical_axis(vertical_axis_) {
    if (q < 1) throw std::invalid_argument("AmbientSplit: q must be >= 1");
    if (n < 0) throw std::invalid_argument("AmbientSplit: n must be >= 0");
    if (n > 0 && (vertical_axis < 0 || vertical_axis >= n))
      throw std::invalid_argument("AmbientSplit: vertical_axis out of range");
    if (q + n > kMaxAmbientDim)
      throw std::invalid_argument("AmbientSplit: ambient dimension too large");
  }

  int dim() const { return q + n; }

  bool has_vertical() const { return n > 0; }

  /// Ambient index of the active vertical coordinate.
  int vertical_index() const {
    if (n == 0) throw std::logic_error("AmbientSplit: no vertical factor");
    return q + vertical_axis;
  }

  /// Unit vector u pointing vertically up along the active axis.
  Vec vertical_unit() const {
    Vec u = Vec::Zero(dim());
    u[vertical_index()] = 1.0;
    return u;
  }

  /// Height of an ambient point along the active vertical axis.
  double height(const Vec& x) const { return x[vertical_index()]; }

  bool operator==(const AmbientSplit& o) const {
    return q == o.q && n == o.n && vertical_axis == o.vertical_axis;
  }
};

}  // namespace straightflow

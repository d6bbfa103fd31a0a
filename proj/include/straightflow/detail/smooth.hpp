#pragma once

#include <algorithm>
#include <cmath>

#include "straightflow/errors.hpp"
#include "straightflow/split.hpp"

namespace straightflow::detail {

/// exp(-1/t) for t > 0, 0 otherwise. All derivatives vanish at t = 0.
inline double bump_half(double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; }

/// C-infinity monotone step: 0 for t <= 0, 1 for t >= 1, flat to all orders
/// at both ends. Symmetric about t = 1/2.
inline double smooth_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double a = bump_half(t);
  const double b = bump_half(1.0 - t);
  return a / (a + b);
}

/// Integral of smooth_step over [0, t], t in [0, 1]. 32-node Gauss-Legendre;
/// the integrand is analytic inside (0,1) so this is far below 1e-12 error.
double smooth_step_integral(double t);

/// Smooth clamp r(theta) of the rotation amount against `full`:
///   r = theta            for theta <= full - width,
///   r = full             for theta >= full + width,
/// smooth monotone interpolation in between with r <= min(theta, full) and
/// 0 <= dr/dtheta <= 1 throughout. width == 0 degenerates to min(theta, full).
double smooth_clamp(double theta, double full, double width);

/// Phase-out factor: 1 for t <= omega, 0 for t >= 2*omega, C-infinity ramp
/// in between. omega <= 0 means "never phase out" (returns 1).
inline double phase_out(double t, double omega) {
  if (omega <= 0.0) return 1.0;
  if (t <= omega) return 1.0;
  if (t >= 2.0 * omega) return 0.0;
  return 1.0 - smooth_step(t / omega - 1.0);
}

/// Effective flowed time: integral of phase_out over [0, t].
double phase_out_integral(double t, double omega);

inline double clamp_unit(double x) { return std::min(1.0, std::max(-1.0, x)); }

/// Angle between unit vectors, in [0, pi].
inline double angle_between(const Vec& a, const Vec& b) {
  return std::acos(clamp_unit(a.dot(b)));
}

/// Rotate unit vector v toward unit vector target by `angle` inside their
/// common plane. Requires the pair to be neither parallel nor antipodal
/// unless angle == 0.
Vec rotate_toward(const Vec& v, const Vec& target, double angle);

/// Great-circle interpolation from unit a (t=0) to unit b (t=1) along the
/// short arc. Throws AntipodalCollar if a and b are antipodal within
/// `antipodal_tol` (radians) and t actually requires a direction.
Vec slerp(const Vec& a, const Vec& b, double t, double antipodal_tol);

}  // namespace straightflow::detail

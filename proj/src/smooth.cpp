#include "straightflow/detail/smooth.hpp"

namespace straightflow::detail {

namespace {

// 16-point Gauss-Legendre nodes/weights on [-1, 1], positive half; mirrored
// at use. Composite over two panels gives 32 effective nodes.
constexpr int kHalf = 8;
constexpr double kNodes[kHalf] = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
    0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
    0.9445750230732326, 0.9894009349916499};
constexpr double kWeights[kHalf] = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
    0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
    0.0622535239386479, 0.0271524594117541};

double gl16(double lo, double hi, double (*f)(double)) {
  const double c = 0.5 * (lo + hi);
  const double h = 0.5 * (hi - lo);
  double acc = 0.0;
  for (int i = 0; i < kHalf; ++i) {
    acc += kWeights[i] * (f(c + h * kNodes[i]) + f(c - h * kNodes[i]));
  }
  return acc * h;
}

}  // namespace

double smooth_step_integral(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return t - 0.5;  // symmetry: integral over [0,1] is 1/2
  const double mid = 0.5 * t;
  return gl16(0.0, mid, &smooth_step) + gl16(mid, t, &smooth_step);
}

double smooth_clamp(double theta, double full, double width) {
  if (width <= 0.0) return std::min(theta, full);
  const double lo = full - width;
  if (theta <= lo) return theta;
  const double t = std::min((theta - lo) / (2.0 * width), 1.0);
  // r(theta) = lo + 2*width * (t - I(t)); dr/dtheta = 1 - step in [0,1],
  // r(lo) = lo, r(full+width) = lo + 2*width*(1 - 1/2) = full.
  return lo + 2.0 * width * (t - smooth_step_integral(t));
}

double phase_out_integral(double t, double omega) {
  if (omega <= 0.0 || t <= omega) return std::max(t, 0.0);
  const double s = std::min(t / omega - 1.0, 1.0);
  return omega + omega * (s - smooth_step_integral(s));
}

Vec rotate_toward(const Vec& v, const Vec& target, double angle) {
  if (angle == 0.0) return v;
  Vec w = target - target.dot(v) * v;
  const double norm = w.norm();
  if (norm < 1e-14)
    throw DependentField("rotate_toward: rotation plane undefined (vectors parallel)");
  w /= norm;
  return std::cos(angle) * v + std::sin(angle) * w;
}

Vec slerp(const Vec& a, const Vec& b, double t, double antipodal_tol) {
  if (t <= 0.0) return a;
  if (t >= 1.0) return b;
  const double cosang = clamp_unit(a.dot(b));
  const double ang = std::acos(cosang);
  if (ang >= M_PI - antipodal_tol)
    throw AntipodalCollar("slerp: endpoints antipodal within tolerance");
  if (ang < 1e-14) return a;
  return rotate_toward(a, b, t * ang);
}

}  // namespace straightflow::detail

#pragma once

// Unit sphere S^{d-1}: tangent projection, the normalization retraction and
// the two per-column update rules used for the spherical layer.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "hsphere/common.hpp"

namespace hsphere::sphere {

/// A vector of unit Euclidean norm (within tol::kUnitNorm).
class SpherePoint {
 public:
  explicit SpherePoint(Vector v) : v_(std::move(v)) {
    if (v_.size() == 0) throw ManifoldError("sphere point must have dimension >= 1");
    const double n = v_.norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > tol::kUnitNorm) {
      throw ManifoldError("point is not on the unit sphere (norm " + std::to_string(n) + ")");
    }
  }

  /// Rescales a nonzero vector onto the sphere.
  static SpherePoint normalized(const Vector& v) {
    const double n = v.norm();
    if (!(n > tol::kZeroNorm) || !std::isfinite(n)) throw ManifoldError("cannot normalize a zero or non-finite vector");
    return SpherePoint(v / n);
  }

  const Vector& vector() const noexcept { return v_; }
  Eigen::Index dim() const noexcept { return v_.size(); }

 private:
  Vector v_;
};

struct TangentVector {
  SpherePoint base;
  Vector t;
};

/// P_x(y) = y - (x^T y) x.
inline TangentVector project_tangent(const SpherePoint& x, const Vector& y) {
  if (y.size() != x.dim()) throw std::invalid_argument("dimension mismatch in project_tangent");
  const Vector& xv = x.vector();
  return {x, y - xv.dot(y) * xv};
}

/// Riemannian gradient of f at x from its Euclidean gradient.
inline Vector riemannian_gradient(const SpherePoint& x, const Vector& euclid_grad) {
  return project_tangent(x, euclid_grad).t;
}

/// R_x(h t) = (x + h t) / ||x + h t||. A near-zero denominator is an error.
inline SpherePoint retract(const SpherePoint& x, const Vector& t, double h) {
  if (t.size() != x.dim()) throw std::invalid_argument("dimension mismatch in retract");
  Vector y = x.vector() + h * t;
  const double n = y.norm();
  if (!std::isfinite(n)) throw ManifoldError("retraction produced a non-finite point");
  if (n <= tol::kZeroNorm) throw ManifoldError("retraction denominator vanished (antipodal step)");
  return SpherePoint(y / n);
}

/// One Riemannian gradient step: s = (x^T g) x - g, then retract(x, s, h).
inline SpherePoint rsgd_step(const SpherePoint& x, const Vector& euclid_grad, double h) {
  if (euclid_grad.size() != x.dim()) throw std::invalid_argument("dimension mismatch in rsgd_step");
  const Vector& xv = x.vector();
  const Vector s = xv.dot(euclid_grad) * xv - euclid_grad;
  return retract(x, s, h);
}

/// Euclidean step followed by renormalization: (x - h g) / ||x - h g||.
inline SpherePoint projected_step(const SpherePoint& x, const Vector& euclid_grad, double h) {
  if (euclid_grad.size() != x.dim()) throw std::invalid_argument("dimension mismatch in projected_step");
  Vector y = x.vector() - h * euclid_grad;
  const double n = y.norm();
  if (!std::isfinite(n)) throw ManifoldError("projected step produced a non-finite point");
  if (n <= tol::kZeroNorm) throw ManifoldError("projected step landed on the origin");
  return SpherePoint(y / n);
}

/// Standard normal sample normalized to unit length; all-zero draws are redrawn.
inline SpherePoint random_sphere_point(Eigen::Index d, Rng& rng) {
  if (d < 1) throw std::invalid_argument("sphere dimension must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d);
  while (true) {
    for (Eigen::Index i = 0; i < d; ++i) v(i) = normal(rng);
    const double n = v.norm();
    if (n > tol::kZeroNorm) return SpherePoint(v / n);
  }
}

inline SpherePoint random_sphere_point(Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  return random_sphere_point(d, rng);
}

}  // namespace hsphere::sphere

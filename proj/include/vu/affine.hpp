#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/LU>

namespace vu {

/// 2x3 row-major affine map p -> L p + t on 2D points.
struct Affine2D {
  Eigen::Matrix<double, 2, 3> m = (Eigen::Matrix<double, 2, 3>() << 1, 0, 0, 0, 1, 0).finished();

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return m.leftCols<2>() * p + m.col(2); }
  double det() const { return m.leftCols<2>().determinant(); }

  Affine2D inverse() const {
    const Eigen::Matrix2d inv = m.leftCols<2>().inverse();
    Affine2D out;
    out.m.leftCols<2>() = inv;
    out.m.col(2) = -inv * m.col(2);
    return out;
  }

  static Affine2D from_similarity(double angle_rad, double scale, const Eigen::Vector2d& pivot,
                                  const Eigen::Vector2d& shift) {
    Affine2D a;
    const double c = std::cos(angle_rad) * scale, s = std::sin(angle_rad) * scale;
    a.m.leftCols<2>() << c, -s, s, c;
    a.m.col(2) = pivot - a.m.leftCols<2>() * pivot + shift;
    return a;
  }
};

}  // namespace vu

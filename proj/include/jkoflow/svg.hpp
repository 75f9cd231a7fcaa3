#pragma once

// Scatter plots as plain SVG: one <circle> per point on a fixed viewBox.
// Points with more than two coordinates are projected on their two leading
// principal components.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <string>
#include <vector>

#include "jkoflow/datasets.hpp"

namespace jko {

/// First two coordinates, or the top-2 PCA projection when d > 2.
inline Matrix plane_projection(const Matrix& x) {
  if (x.cols() <= 2) {
    Matrix out = Matrix::Zero(x.rows(), 2);
    out.leftCols(x.cols()) = x;
    return out;
  }
  const Matrix c = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c.transpose() * c);
  const Eigen::Index d = x.cols();
  Matrix basis(d, 2);
  basis.col(0) = eig.eigenvectors().col(d - 1);
  basis.col(1) = eig.eigenvectors().col(d - 2);
  return c * basis;
}

inline std::string scatter_svg(const Matrix& x, const std::vector<int>& labels = {},
                               const std::vector<Vector>& path = {}) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  constexpr double size = 400.0;
  constexpr double margin = 10.0;
  const Matrix p = plane_projection(x);
  Eigen::Vector2d lo(-1, -1), hi(1, 1);
  if (p.rows() > 0) {
    lo = p.colwise().minCoeff().transpose();
    hi = p.colwise().maxCoeff().transpose();
  }
  for (const Vector& q : path) {
    lo = lo.cwiseMin(q.head<2>());
    hi = hi.cwiseMax(q.head<2>());
  }
  const double span = std::max({hi[0] - lo[0], hi[1] - lo[1], 1e-12});
  auto sx = [&](double v) { return margin + (v - lo[0]) / span * (size - 2 * margin); };
  auto sy = [&](double v) { return size - margin - (v - lo[1]) / span * (size - 2 * margin); };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 400 400\" width=\"400\" height=\"400\">\n";
  out += "<rect width=\"400\" height=\"400\" fill=\"white\"/>\n";
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const int lab = labels.empty() ? 0 : labels[static_cast<std::size_t>(i)];
    out += "<circle cx=\"" + format_double(sx(p(i, 0))) + "\" cy=\"" + format_double(sy(p(i, 1))) +
           "\" r=\"1\" fill=\"" + palette[static_cast<std::size_t>(std::abs(lab)) % 6] + "\"/>\n";
  }
  if (!path.empty()) {
    out += "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1\" points=\"";
    for (const Vector& q : path) out += format_double(sx(q[0])) + "," + format_double(sy(q[1])) + " ";
    out += "\"/>\n";
    for (const Vector& q : path) {
      out += "<circle cx=\"" + format_double(sx(q[0])) + "\" cy=\"" + format_double(sy(q[1])) +
             "\" r=\"3\" fill=\"black\"/>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

inline void write_scatter_svg(const std::string& path, const Matrix& x, const std::vector<int>& labels = {}) {
  write_file_atomic(path, scatter_svg(x, labels));
}

}  // namespace jko

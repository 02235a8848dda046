#pragma once

#include "qlsr/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <vector>

namespace qlsr {

struct WilliamsonForm {
  Mat S;     // symplectic: S^T J S = J
  Vec d;     // S^T M S = diag(d) (x) I_2, ascending
};

// Symplectic diagonalization of a symmetric positive definite M.
inline WilliamsonForm williamson(const Mat& M) {
  const auto N = M.rows();
  if (N % 2 || M.cols() != N) throw std::invalid_argument("williamson: need square even-dimensional matrix");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()));
  if (es.eigenvalues().minCoeff() <= 0) throw std::invalid_argument("williamson: matrix not positive definite");
  const Mat Mh = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                 es.eigenvectors().transpose();
  Mat K = Mh * symplectic(int(N / 2)) * Mh;
  K = (0.5 * (K - K.transpose())).eval();
  Eigen::RealSchur<Mat> rs(K);
  const Mat T = rs.matrixT(), O = rs.matrixU();
  const int n = int(N / 2);
  std::vector<double> mu;
  std::vector<std::pair<Vec, Vec>> cols;
  for (int i = 0; i < N;) {
    if (i + 1 >= N || std::abs(T(i + 1, i)) == 0.0)
      throw std::runtime_error("williamson: degenerate symplectic spectrum");
    double b = 0.5 * (T(i, i + 1) - T(i + 1, i));
    Vec o1 = O.col(i), o2 = O.col(i + 1);
    if (b < 0) {
      b = -b;
      std::swap(o1, o2);
    }
    mu.push_back(b);
    cols.emplace_back(o1, o2);
    i += 2;
  }
  // d = 1/mu ascending  <=>  mu descending
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mu[a] > mu[b]; });
  WilliamsonForm w;
  w.S.resize(N, N);
  w.d.resize(n);
  for (int j = 0; j < n; ++j) {
    const int k = order[j];
    const double s = 1.0 / std::sqrt(mu[k]);
    w.S.col(2 * j) = s * (Mh * cols[k].first);
    w.S.col(2 * j + 1) = s * (Mh * cols[k].second);
    w.d(j) = 1.0 / mu[k];
  }
  return w;
}

}  // namespace qlsr

#pragma once

#include "qlsr/core.hpp"

#include <random>

namespace testutil {

using qlsr::CMat;
using qlsr::Mat;

inline Mat random_matrix(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 7919 + 17);
  std::normal_distribution<double> N(0, 1);
  Mat M(r, c);
  for (int i = 0; i < M.size(); ++i) M.data()[i] = N(rng);
  return M;
}

inline CMat random_cmatrix(int r, int c, std::uint64_t seed) {
  return random_matrix(r, c, seed).cast<qlsr::cplx>() +
         qlsr::cplx(0, 1) * random_matrix(r, c, seed + 1000003).cast<qlsr::cplx>();
}

inline Mat random_symmetric(int n, std::uint64_t seed) {
  Mat M = random_matrix(n, n, seed);
  return 0.5 * (M + M.transpose());
}

inline Mat kron(const Mat& a, const Mat& b) {
  Mat K(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) K.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return K;
}

// Random Hurwitz matrix: random matrix shifted left of its spectral abscissa.
inline Mat random_hurwitz(int n, std::uint64_t seed, double margin = 0.1) {
  Mat A = random_matrix(n, n, seed);
  const double a = qlsr::is_hurwitz(A).abscissa;
  return A - (a + margin) * Mat::Identity(n, n);
}

}  // namespace testutil

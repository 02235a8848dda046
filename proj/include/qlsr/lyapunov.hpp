#pragma once

#include "qlsr/core.hpp"

#include <Eigen/Eigenvalues>

#include <vector>

namespace qlsr {

struct LyapunovOptions {
  // When false, a non-Hurwitz A is accepted as long as the equation has a unique
  // solution (no eigenvalue pair summing to ~0).
  bool require_hurwitz = true;
  double singular_tol = 1e-12;    // relative to ||A||_F
  double asymmetry_tol = 1e-9;    // relative
  double residual_tol = 1e-10;    // relative, see lyapunov_residual_bound
};

class LyapunovError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Diagonal blocks (start, size) of a real quasi-triangular Schur factor.
inline std::vector<std::pair<int, int>> schur_blocks(const Mat& T) {
  std::vector<std::pair<int, int>> blocks;
  const int n = int(T.rows());
  for (int i = 0; i < n;) {
    if (i + 1 < n && T(i + 1, i) != 0.0) {
      blocks.emplace_back(i, 2);
      i += 2;
    } else {
      blocks.emplace_back(i, 1);
      i += 1;
    }
  }
  return blocks;
}

inline Eigen::VectorXcd block_eigs(const Mat& blk) {
  if (blk.rows() == 1) return Eigen::VectorXcd::Constant(1, cplx(blk(0, 0), 0));
  const double tr = blk.trace(), det = blk.determinant();
  const cplx disc = std::sqrt(cplx(tr * tr / 4 - det, 0));
  Eigen::VectorXcd e(2);
  e << tr / 2 + disc, tr / 2 - disc;
  return e;
}

}  // namespace detail

inline double lyapunov_residual(const Mat& A, const Mat& X, const Mat& W) {
  return (A * X + X * A.transpose() + W).norm();
}

inline double lyapunov_residual_bound(const Mat& A, const Mat& X, const Mat& W, double rel) {
  return rel * (2 * A.norm() * X.norm() + W.norm());
}

// A X + X A^T + W = 0.  Bartels-Stewart: real Schur form of A, then
// block back-substitution on 1x1/2x2 diagonal blocks.
inline Mat solve_lyapunov(const Mat& A, const Mat& W, const LyapunovOptions& opt = {}) {
  const int n = int(A.rows());
  if (A.cols() != n || W.rows() != n || W.cols() != n)
    throw std::invalid_argument("solve_lyapunov: dimension mismatch");
  if (n == 0) return Mat(0, 0);
  if ((W - W.transpose()).norm() > 1e-12 * std::max(1.0, W.norm()))
    throw std::invalid_argument("solve_lyapunov: W not symmetric");
  if (!A.allFinite() || !W.allFinite()) throw std::invalid_argument("solve_lyapunov: non-finite input");

  Eigen::RealSchur<Mat> schur(A);
  if (schur.info() != Eigen::Success) throw LyapunovError("solve_lyapunov: Schur decomposition failed");
  const Mat& T = schur.matrixT();
  const Mat& U = schur.matrixU();
  const auto blocks = detail::schur_blocks(T);

  const double anorm = A.norm();
  std::vector<Eigen::VectorXcd> eigs;
  double abscissa = -std::numeric_limits<double>::infinity();
  for (auto [s, k] : blocks) {
    eigs.push_back(detail::block_eigs(T.block(s, s, k, k)));
    abscissa = std::max(abscissa, eigs.back().real().maxCoeff());
  }
  if (opt.require_hurwitz && !(abscissa < 0))
    throw LyapunovError("solve_lyapunov: A is not Hurwitz (abscissa " + std::to_string(abscissa) + ")");

  const Mat C = U.transpose() * W * U;
  Mat Y = Mat::Zero(n, n);
  const int nb = int(blocks.size());
  for (int bj = nb - 1; bj >= 0; --bj) {
    const auto [sj, kj] = blocks[bj];
    for (int bi = nb - 1; bi >= 0; --bi) {
      const auto [si, ki] = blocks[bi];
      double gap = std::numeric_limits<double>::infinity();
      for (int a = 0; a < eigs[bi].size(); ++a)
        for (int b = 0; b < eigs[bj].size(); ++b) gap = std::min(gap, std::abs(eigs[bi](a) + eigs[bj](b)));
      if (gap < opt.singular_tol * std::max(anorm, 1e-300))
        throw LyapunovError("solve_lyapunov: eigenvalue pair sums to ~0, equation nearly singular");

      // T_ii Y_ij + Y_ij T_jj^T = -C_ij - sum_{k>i} T_ik Y_kj - sum_{k>j} Y_ik T_jk^T
      Mat rhs = -C.block(si, sj, ki, kj);
      const int ei = si + ki, ej = sj + kj;
      if (ei < n) rhs -= T.block(si, ei, ki, n - ei) * Y.block(ei, sj, n - ei, kj);
      if (ej < n) rhs -= Y.block(si, ej, ki, n - ej) * T.block(sj, ej, kj, n - ej).transpose();

      const Mat Tii = T.block(si, si, ki, ki), Tjj = T.block(sj, sj, kj, kj);
      const int p = ki * kj;
      Mat K = Mat::Zero(p, p);
      // column-major vec: (I (x) Tii + Tjj (x) I)
      for (int c = 0; c < kj; ++c)
        K.block(c * ki, c * ki, ki, ki) += Tii;
      for (int c = 0; c < kj; ++c)
        for (int d = 0; d < kj; ++d)
          K.block(c * ki, d * ki, ki, ki) += Tjj(c, d) * Mat::Identity(ki, ki);
      const Vec sol = K.fullPivLu().solve(Eigen::Map<const Vec>(rhs.data(), p));
      Y.block(si, sj, ki, kj) = Eigen::Map<const Mat>(sol.data(), ki, kj);
    }
  }

  Mat X = U * Y * U.transpose();
  const double asym = (X - X.transpose()).norm();
  if (asym > opt.asymmetry_tol * std::max(X.norm(), 1e-300) && asym > 1e-14)
    throw LyapunovError("solve_lyapunov: solution asymmetry exceeds tolerance");
  X = 0.5 * (X + X.transpose()).eval();
  const double res = lyapunov_residual(A, X, W);
  if (res > lyapunov_residual_bound(A, X, W, opt.residual_tol))
    throw LyapunovError("solve_lyapunov: residual " + std::to_string(res) + " above bound");
  return X;
}

// P, Q of an (augmented) system, partitioned after the first n2 states.
struct GramianBlocks {
  Mat P, Q;
  int n2 = 0, r2 = 0;  // full and reduced state dimensions
  Mat P1() const { return P.topLeftCorner(n2, n2); }
  Mat P2() const { return P.topRightCorner(n2, r2); }
  Mat P3() const { return P.bottomRightCorner(r2, r2); }
  Mat Q1() const { return Q.topLeftCorner(n2, n2); }
  Mat Q2() const { return Q.topRightCorner(n2, r2); }
  Mat Q3() const { return Q.bottomRightCorner(r2, r2); }
};

// A P + P A^T + B B^T = 0 and A^T Q + Q A + C^T C = 0.
inline GramianBlocks gramians(const Mat& A, const Mat& B, const Mat& C, int reduced_dim = 0,
                              const LyapunovOptions& opt = {}) {
  GramianBlocks g;
  g.P = solve_lyapunov(A, B * B.transpose(), opt);
  g.Q = solve_lyapunov(A.transpose(), C.transpose() * C, opt);
  g.r2 = reduced_dim;
  g.n2 = int(A.rows()) - reduced_dim;
  return g;
}

inline GramianBlocks gramians(const QuantumLinearSystem& s, const LyapunovOptions& opt = {}) {
  return gramians(s.A, s.B, s.C, 0, opt);
}

}  // namespace qlsr

#pragma once

#include "qlsr/h2.hpp"

#include <numbers>

namespace qlsr {

// Squared H2 error of (full - reduced) and its gradient with respect to the
// reduced matrices, from the augmented Gramian blocks:
//   dA_r = 2 (Q2^T P2 + Q3 P3),  dB_r = 2 (Q2^T B + Q3 B_r),  dC_r = 2 (C_r P3 - C P2).
// These are also the stationarity residuals of the unconstrained problem.
struct H2Gradient {
  double f = std::numeric_limits<double>::infinity();
  Mat dA, dB, dC;
  GramianBlocks gb;
};

inline H2Gradient h2_error_gradient(const QuantumLinearSystem& full, const QuantumLinearSystem& red) {
  H2Gradient out;
  if (!is_hurwitz(red.A, default_stability_margin(red.A)).stable) return out;
  const auto aug = build_augmented(full, red);
  try {
    out.gb = gramians(aug.A, aug.B, aug.C, 2 * red.n);
  } catch (const LyapunovError&) {
    return out;
  }
  const Mat P2 = out.gb.P2(), P3 = out.gb.P3(), Q2 = out.gb.Q2(), Q3 = out.gb.Q3();
  out.f = (aug.B.transpose() * out.gb.Q * aug.B).trace();
  out.dA = 2 * (Q2.transpose() * P2 + Q3 * P3);
  out.dB = 2 * (Q2.transpose() * full.B + Q3 * red.B);
  out.dC = 2 * (red.C * P3 - full.C * P2);
  return out;
}

// Realizable reduced models written as
//   A_r = J R + 1/2 B_r J_m B_r^T J,  C_r = D J_m B_r^T J,  D_r = D,
// with R symmetric.  Every parameter vector gives a model that satisfies the
// realizability conditions exactly.  Off-diagonal entries of R are stored
// times sqrt(2) so the parameter norm matches the Frobenius norm.
struct ActiveParametrization {
  int r = 0, m = 0;
  Mat D;

  ActiveParametrization(int r_, const Mat& D_) : r(r_), m(int(D_.cols() / 2)), D(D_) {}

  int size() const { return 2 * r * (2 * r + 1) / 2 + 2 * r * 2 * m; }

  QuantumLinearSystem to_system(const Vec& th) const {
    const int k = 2 * r;
    Mat R(k, k);
    int idx = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i; j < k; ++j) {
        const double v = (i == j) ? th(idx) : th(idx) / std::numbers::sqrt2;
        R(i, j) = R(j, i) = v;
        ++idx;
      }
    const Mat Br = Eigen::Map<const Mat>(th.data() + idx, k, 2 * m);
    const Mat Jr = symplectic(r), Jm = symplectic(m);
    Mat Ar = Jr * R + 0.5 * Br * Jm * Br.transpose() * Jr;
    Mat Cr = D * Jm * Br.transpose() * Jr;
    return {Ar, Br, Cr, D};
  }

  // Nearest parameters: keeps B_r and takes R from the symmetric part implied by A_r.
  Vec from_system(const QuantumLinearSystem& red) const {
    const int k = 2 * r;
    const Mat Jr = symplectic(r), Jm = symplectic(m);
    Mat R = Jr.transpose() * (red.A - 0.5 * red.B * Jm * red.B.transpose() * Jr);
    R = (0.5 * (R + R.transpose())).eval();
    Vec th(size());
    int idx = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i; j < k; ++j) th(idx++) = (i == j) ? R(i, i) : std::numbers::sqrt2 * R(i, j);
    Eigen::Map<Mat>(th.data() + idx, k, 2 * m) = red.B;
    return th;
  }

  Vec chain(const QuantumLinearSystem& red, const H2Gradient& g) const {
    const int k = 2 * r;
    const Mat Jr = symplectic(r), Jm = symplectic(m);
    const Mat GR = Jr.transpose() * g.dA;
    Vec out(size());
    int idx = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i; j < k; ++j)
        out(idx++) = (i == j) ? GR(i, i) : (GR(i, j) + GR(j, i)) / std::numbers::sqrt2;
    const Mat& B = red.B;
    Mat gB = g.dB + 0.5 * (g.dA * Jr * B * Jm + Jr * g.dA.transpose() * B * Jm) +
             Jr * g.dC.transpose() * D * Jm;
    Eigen::Map<Mat>(out.data() + idx, k, 2 * m) = gB;
    return out;
  }
};

// Passive reduced models from a Hermitian H and complex coupling G:
//   F = -i H - 1/2 G G^dagger,  A_r = quad(F),  B_r = quad(G),  C_r = -B_r^T,  D_r = I.
// These commute with J, so they are realizable in the general sense too.
struct PassiveParametrization {
  int r = 0, m = 0;

  PassiveParametrization(int r_, int m_) : r(r_), m(m_) {}

  int size() const { return r * r + 2 * r * m; }

  QuantumLinearSystem to_system(const Vec& th) const {
    CMat H = CMat::Zero(r, r);
    int idx = 0;
    for (int i = 0; i < r; ++i) H(i, i) = th(idx++);
    for (int i = 0; i < r; ++i)
      for (int j = i + 1; j < r; ++j) {
        H(i, j) = cplx(th(idx), th(idx + 1)) / std::numbers::sqrt2;
        H(j, i) = std::conj(H(i, j));
        idx += 2;
      }
    CMat G(r, m);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < m; ++j) {
        G(i, j) = cplx(th(idx), th(idx + 1));
        idx += 2;
      }
    const CMat F = cplx(0, -1) * H - 0.5 * G * G.adjoint();
    const Mat Br = complex_to_quadrature(G);
    return {complex_to_quadrature(F), Br, -Br.transpose(), Mat::Identity(2 * m, 2 * m)};
  }

  Vec from_system(const QuantumLinearSystem& red) const {
    // project onto the J-commuting structure first
    const CMat G = quadrature_to_complex(0.5 * (red.B - symplectic(r) * red.B * symplectic(m)));
    const CMat F = quadrature_to_complex(0.5 * (red.A - symplectic(r) * red.A * symplectic(r)));
    CMat H = cplx(0, 1) * (F + 0.5 * G * G.adjoint());
    H = (0.5 * (H + H.adjoint())).eval();
    Vec th(size());
    int idx = 0;
    for (int i = 0; i < r; ++i) th(idx++) = H(i, i).real();
    for (int i = 0; i < r; ++i)
      for (int j = i + 1; j < r; ++j) {
        th(idx++) = std::numbers::sqrt2 * H(i, j).real();
        th(idx++) = std::numbers::sqrt2 * H(i, j).imag();
      }
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < m; ++j) {
        th(idx++) = G(i, j).real();
        th(idx++) = G(i, j).imag();
      }
    return th;
  }

  Vec chain(const QuantumLinearSystem& red, const H2Gradient& g) const {
    const Mat Jr = symplectic(r);
    // A_r = J quad(H) - 1/2 B_r B_r^T
    const Mat GR = Jr.transpose() * g.dA;
    const Mat GB = g.dB - 0.5 * (g.dA + g.dA.transpose()) * red.B - g.dC.transpose();
    auto blk = [](const Mat& M, int i, int j) { return M.block<2, 2>(2 * i, 2 * j); };
    Vec out(size());
    int idx = 0;
    for (int i = 0; i < r; ++i) out(idx++) = blk(GR, i, i).trace();
    for (int i = 0; i < r; ++i)
      for (int j = i + 1; j < r; ++j) {
        const Eigen::Matrix2d a = blk(GR, i, j), b = blk(GR, j, i);
        out(idx++) = (a.trace() + b.trace()) / std::numbers::sqrt2;
        out(idx++) = ((a(1, 0) - a(0, 1)) + (b(0, 1) - b(1, 0))) / std::numbers::sqrt2;
      }
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < m; ++j) {
        const Eigen::Matrix2d a = blk(GB, i, j);
        out(idx++) = a.trace();
        out(idx++) = a(1, 0) - a(0, 1);
      }
    return out;
  }
};

}  // namespace qlsr

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace qlsr {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using cplx = std::complex<double>;

// Real quadrature state space: dx = A x dt + B dw, dy = C x dt + D dw.
// State dim 2n, input dim 2m, output dim 2l.
struct QuantumLinearSystem {
  int n = 0, m = 0, l = 0;
  Mat A, B, C, D;

  QuantumLinearSystem() = default;
  QuantumLinearSystem(Mat a, Mat b, Mat c, Mat d)
      : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)) {
    if (A.rows() % 2 || B.cols() % 2 || C.rows() % 2)
      throw std::invalid_argument("QuantumLinearSystem: dimensions must be even");
    n = int(A.rows() / 2);
    m = int(B.cols() / 2);
    l = int(C.rows() / 2);
    validate();
  }

  void validate() const {
    const auto N = 2 * n, M = 2 * m, L = 2 * l;
    if (n < 0 || m < 1 || l < 1)
      throw std::invalid_argument("QuantumLinearSystem: bad mode/channel counts");
    if (A.rows() != N || A.cols() != N || B.rows() != N || B.cols() != M ||
        C.rows() != L || C.cols() != N || D.rows() != L || D.cols() != M)
      throw std::invalid_argument("QuantumLinearSystem: dimension mismatch");
  }
};

// Annihilation-operator form: da = F a dt + G dA, dB_out = H a dt + K dA.
struct PassiveComplexSystem {
  CMat F, G, H, K;
};

// I_k (x) [[0,1],[-1,0]]
inline Mat symplectic(int k) {
  if (k < 0) throw std::invalid_argument("symplectic: negative size");
  Mat J = Mat::Zero(2 * k, 2 * k);
  for (int i = 0; i < k; ++i) {
    J(2 * i, 2 * i + 1) = 1.0;
    J(2 * i + 1, 2 * i) = -1.0;
  }
  return J;
}

struct Residuals {
  double r1 = 0, r2 = 0, r3 = 0;
  double max() const { return std::max({r1, r2, r3}); }
};

// Frobenius norms of the three realizability conditions.
inline Residuals realizability_residuals(const QuantumLinearSystem& s) {
  s.validate();
  const Mat Jn = symplectic(s.n), Jm = symplectic(s.m), Jl = symplectic(s.l);
  Residuals r;
  r.r1 = (s.A * Jn + Jn * s.A.transpose() + s.B * Jm * s.B.transpose()).norm();
  r.r2 = (Jn * s.C.transpose() + s.B * Jm * s.D.transpose()).norm();
  r.r3 = (s.D * Jm * s.D.transpose() - Jl).norm();
  return r;
}

// A + A^T + B B^T, B + C^T, D - I.  Only defined for l == m.
inline Residuals passive_residuals(const QuantumLinearSystem& s) {
  s.validate();
  if (s.l != s.m)
    throw std::invalid_argument("passive_residuals: requires equal input and output channel counts");
  Residuals r;
  r.r1 = (s.A + s.A.transpose() + s.B * s.B.transpose()).norm();
  r.r2 = (s.B + s.C.transpose()).norm();
  r.r3 = (s.D - Mat::Identity(s.D.rows(), s.D.cols())).norm();
  return r;
}

// z -> [[Re z, -Im z], [Im z, Re z]], applied entrywise.
inline Mat complex_to_quadrature(const CMat& Z) {
  Mat R(2 * Z.rows(), 2 * Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
      const cplx z = Z(i, j);
      R(2 * i, 2 * j) = z.real();
      R(2 * i, 2 * j + 1) = -z.imag();
      R(2 * i + 1, 2 * j) = z.imag();
      R(2 * i + 1, 2 * j + 1) = z.real();
    }
  return R;
}

// Inverse of complex_to_quadrature for matrices that commute with J.
// Reads the first column of each 2x2 block.
inline CMat quadrature_to_complex(const Mat& R) {
  if (R.rows() % 2 || R.cols() % 2)
    throw std::invalid_argument("quadrature_to_complex: odd dimension");
  CMat Z(R.rows() / 2, R.cols() / 2);
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index j = 0; j < Z.cols(); ++j)
      Z(i, j) = cplx(R(2 * i, 2 * j), R(2 * i + 1, 2 * j));
  return Z;
}

inline QuantumLinearSystem annihilation_to_quadrature(const PassiveComplexSystem& ps) {
  const auto n = ps.F.rows(), m = ps.G.cols(), l = ps.H.rows();
  if (ps.F.cols() != n || ps.G.rows() != n || ps.H.cols() != n || ps.K.rows() != l ||
      ps.K.cols() != m)
    throw std::invalid_argument("annihilation_to_quadrature: dimension mismatch");
  return {complex_to_quadrature(ps.F), complex_to_quadrature(ps.G),
          complex_to_quadrature(ps.H), complex_to_quadrature(ps.K)};
}

struct StabilityInfo {
  bool stable = false;
  double abscissa = 0;
};

// max Re(eig(A)) < -margin
inline StabilityInfo is_hurwitz(const Mat& A, double margin = 0.0) {
  if (A.rows() != A.cols()) throw std::invalid_argument("is_hurwitz: matrix not square");
  if (A.rows() == 0) return {true, -std::numeric_limits<double>::infinity()};
  Eigen::EigenSolver<Mat> es(A, false);
  const double a = es.eigenvalues().real().maxCoeff();
  return {a < -margin, a};
}

inline double default_stability_margin(const Mat& A) {
  return 1e-9 * std::max(1.0, A.norm());
}

// Realizable by construction: A = J R + 1/2 B J_m B^T J, C^T = J B J_m D^T, D = [I 0].
inline QuantumLinearSystem realizable_from(const Mat& R, const Mat& B, int l) {
  const int n = int(R.rows() / 2), m = int(B.cols() / 2);
  if (l < 1 || l > m) throw std::invalid_argument("realizable_from: need 1 <= l <= m");
  const Mat Jn = symplectic(n), Jm = symplectic(m);
  Mat D = Mat::Zero(2 * l, 2 * m);
  D.leftCols(2 * l).setIdentity();
  Mat A = Jn * R + 0.5 * B * Jm * B.transpose() * Jn;
  Mat C = (Jn * B * Jm * D.transpose()).transpose();
  return {A, B, C, D};
}

// Random realizable, Hurwitz system.  R is an oscillator part commuting with J
// plus a general symmetric part; B is a passive coupling plus an active one.
// The J-commuting pieces alone give a dissipative (generically Hurwitz) system,
// so rejected draws shrink the general R part and the active coupling, grow
// the passive coupling, and resample.
inline QuantumLinearSystem random_realizable(int n, int m, std::uint64_t seed,
                                             double stability_margin = -1.0, int l = -1) {
  if (n < 1 || m < 1) throw std::invalid_argument("random_realizable: n, m must be >= 1");
  if (l < 0) l = m;
  if (l > m) throw std::invalid_argument("random_realizable: need l <= m");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  auto gauss = [&](int r, int c) {
    Mat M(r, c);
    for (int i = 0; i < M.size(); ++i) M.data()[i] = N01(rng);
    return M;
  };
  double sR = 0.5, sB = 1.0, sA = 0.3;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const CMat Hc = gauss(n, n).cast<cplx>() + cplx(0, 1) * gauss(n, n).cast<cplx>();
    const Mat Rosc = complex_to_quadrature(0.5 * (Hc + Hc.adjoint()));
    const Mat Rg = gauss(2 * n, 2 * n);
    const Mat R = Rosc + sR * 0.5 * (Rg + Rg.transpose());
    const CMat G = gauss(n, m).cast<cplx>() + cplx(0, 1) * gauss(n, m).cast<cplx>();
    const Mat B = sB * complex_to_quadrature(G) + sA * gauss(2 * n, 2 * m);
    auto sys = realizable_from(R, B, l);
    const double margin =
        stability_margin >= 0 ? stability_margin : default_stability_margin(sys.A);
    if (is_hurwitz(sys.A, margin).stable) return sys;
    sR *= 0.7;
    sB *= 1.1;
    sA *= 0.7;
  }
  throw std::runtime_error("random_realizable: rejection budget exhausted");
}

// Cavity coupled to a mechanical oscillator pair (6 states, 3 input fields, 1 output field).
inline QuantumLinearSystem example_optomech(double kappa, double gamma, double Gamma,
                                            double Omega) {
  if (!(kappa > 0 && gamma > 0 && Gamma >= 0))
    throw std::invalid_argument("example_optomech: rates must be positive");
  Mat A = Mat::Zero(6, 6);
  A(0, 0) = A(1, 1) = -kappa / 2;
  for (int i = 2; i < 6; ++i) A(i, i) = -gamma / 2;
  A(1, 2) = -Gamma;
  A(3, 0) = -Gamma;
  A(2, 5) = Omega;
  A(3, 4) = -Omega;
  A(4, 3) = Omega;
  A(5, 2) = -Omega;
  Mat B = Mat::Zero(6, 6);
  B.topLeftCorner(2, 2) = std::sqrt(kappa) * Mat::Identity(2, 2);
  B.bottomRightCorner(4, 4) = std::sqrt(gamma) * Mat::Identity(4, 4);
  Mat C = Mat::Zero(2, 6);
  C.leftCols(2) = std::sqrt(kappa) * Mat::Identity(2, 2);
  Mat D = Mat::Zero(2, 6);
  D.leftCols(2) = -Mat::Identity(2, 2);
  return {A, B, C, D};
}

// Oscillators in series, field output of each feeding the next.
inline PassiveComplexSystem cascade_complex(const Vec& omega, const Vec& kappa) {
  const auto n = omega.size();
  if (kappa.size() != n) throw std::invalid_argument("cascade: size mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(kappa(i) > 0)) throw std::invalid_argument("cascade: decay rates must be positive");
  PassiveComplexSystem ps;
  ps.F = CMat::Zero(n, n);
  ps.G = CMat::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    ps.F(i, i) = cplx(-kappa(i) / 2, -omega(i));
    for (Eigen::Index j = 0; j < i; ++j) ps.F(i, j) = -std::sqrt(kappa(i) * kappa(j));
    ps.G(i, 0) = -std::sqrt(kappa(i));
  }
  ps.H = -ps.G.adjoint();
  ps.K = CMat::Identity(1, 1);
  return ps;
}

inline QuantumLinearSystem example_cascade(const Vec& omega, const Vec& kappa) {
  return annihilation_to_quadrature(cascade_complex(omega, kappa));
}

// Symplectic (S J S^T = J) via the Cayley transform of the Hamiltonian matrix J H.
inline Mat cayley_symplectic(const Mat& Hsym) {
  const auto k = Hsym.rows();
  const Mat K = symplectic(int(k / 2)) * Hsym;
  const Mat I = Mat::Identity(k, k);
  return (I - K).partialPivLu().solve(I + K);
}

inline QuantumLinearSystem similarity_transform(const QuantumLinearSystem& s, const Mat& S) {
  Eigen::PartialPivLU<Mat> lu(S);
  const Mat Si = lu.inverse();
  return {S * s.A * Si, S * s.B, s.C * Si, s.D};
}

}  // namespace qlsr

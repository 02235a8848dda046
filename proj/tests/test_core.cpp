#include "qlsr/core.hpp"
#include "qlsr/h2.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace qlsr;

TEST(Symplectic, SingleMode) {
  Mat expect(2, 2);
  expect << 0, 1, -1, 0;
  EXPECT_EQ(symplectic(1), expect);
}

TEST(Symplectic, AlgebraicIdentitiesUpTo16) {
  for (int k = 1; k <= 16; ++k) {
    const Mat J = symplectic(k);
    EXPECT_EQ(J.transpose(), -J);
    EXPECT_EQ(J * J, -Mat::Identity(2 * k, 2 * k));
    for (int i = 0; i < J.size(); ++i) {
      const double v = J.data()[i];
      EXPECT_TRUE(v == 0 || v == 1 || v == -1);
    }
  }
}

TEST(Realizability, TrivialSystemHasZeroResiduals) {
  // A=B=C=0 with D = [I 0]
  Mat D = Mat::Zero(2, 4);
  D.leftCols(2).setIdentity();
  QuantumLinearSystem s(Mat::Zero(2, 2), Mat::Zero(2, 4), Mat::Zero(2, 2), D);
  auto r = realizability_residuals(s);
  EXPECT_EQ(r.max(), 0.0);
}

TEST(Realizability, DimensionMismatchThrows) {
  EXPECT_THROW(QuantumLinearSystem(Mat::Zero(4, 4), Mat::Zero(2, 2), Mat::Zero(2, 4), Mat::Identity(2, 2)),
               std::invalid_argument);
}

TEST(Realizability, OptomechTemplate) {
  auto s = example_optomech(2e5, 100, 7.0711e4, 1e4);
  EXPECT_EQ(s.n, 3);
  EXPECT_EQ(s.m, 3);
  EXPECT_EQ(s.l, 1);
  EXPECT_LT(realizability_residuals(s).max(), 1e-10);
  EXPECT_TRUE(is_hurwitz(s.A, default_stability_margin(s.A)).stable);
  // arbitrary positive parameters
  for (auto p : {std::array<double, 4>{1, 2, 3, 4}, {0.1, 5, 0.3, 20}, {7, 0.01, 2, 0.5}}) {
    auto t = example_optomech(p[0], p[1], p[2], p[3]);
    EXPECT_LT(realizability_residuals(t).max(), 1e-12);
  }
}

TEST(Realizability, OptomechWithoutCouplingDecouplesCavity) {
  auto s = example_optomech(2e5, 100, 0.0, 1e4);
  EXPECT_EQ(s.A(1, 2), 0.0);
  EXPECT_EQ(s.A(3, 0), 0.0);
}

TEST(Realizability, OptomechEntries) {
  const double k = 2e5, g = 100, G = 7.0711e4, W = 1e4;
  auto s = example_optomech(k, g, G, W);
  Mat A(6, 6);
  A << -k / 2, 0, 0, 0, 0, 0,
       0, -k / 2, -G, 0, 0, 0,
       0, 0, -g / 2, 0, 0, W,
       -G, 0, 0, -g / 2, -W, 0,
       0, 0, 0, W, -g / 2, 0,
       0, 0, -W, 0, 0, -g / 2;
  EXPECT_EQ(s.A, A);
  EXPECT_DOUBLE_EQ(s.B(0, 0), std::sqrt(k));
  EXPECT_DOUBLE_EQ(s.B(5, 5), std::sqrt(g));
  EXPECT_EQ(s.D(0, 0), -1.0);
  EXPECT_EQ(s.D(1, 1), -1.0);
}

TEST(RandomRealizable, HundredSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int n = 1 + int(seed % 5), m = 1 + int(seed % 3);
    auto s = random_realizable(n, m, seed);
    EXPECT_LT(realizability_residuals(s).max(), 1e-10) << "seed " << seed;
    EXPECT_TRUE(is_hurwitz(s.A, default_stability_margin(s.A)).stable) << "seed " << seed;
  }
}

TEST(RandomRealizable, Deterministic) {
  auto a = random_realizable(4, 2, 7);
  auto b = random_realizable(4, 2, 7);
  EXPECT_EQ(a.A, b.A);
  EXPECT_EQ(a.B, b.B);
  EXPECT_EQ(a.C, b.C);
  EXPECT_EQ(a.D, b.D);
}

TEST(RandomRealizable, FewerOutputsThanInputs) {
  auto s = random_realizable(3, 3, 11, -1.0, 1);
  EXPECT_EQ(s.l, 1);
  EXPECT_LT(realizability_residuals(s).max(), 1e-10);
}

TEST(RandomRealizable, ZeroHamiltonianPart) {
  Mat B = testutil::random_matrix(4, 4, 3);
  auto s = realizable_from(Mat::Zero(4, 4), B, 2);
  const Mat Jn = symplectic(2);
  EXPECT_LT((s.A - 0.5 * B * Jn * B.transpose() * Jn).norm(), 1e-14);
  EXPECT_LT(realizability_residuals(s).r1, 1e-12);
}

TEST(RandomRealizable, BadArguments) {
  EXPECT_THROW(random_realizable(0, 1, 1), std::invalid_argument);
  EXPECT_THROW(random_realizable(1, 0, 1), std::invalid_argument);
}

TEST(Passive, CascadeResidualsVanish) {
  auto s = example_cascade(Vec::Map(std::array<double, 3>{10, 10, 0.01}.data(), 3), Vec::Ones(3));
  auto p = passive_residuals(s);
  EXPECT_LT(p.max(), 1e-10);
  EXPECT_TRUE(is_hurwitz(s.A).stable);
}

TEST(Passive, CascadeZeroDetuning) {
  auto s = example_cascade(Vec::Zero(3), Vec::Ones(3));
  for (int i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(s.A(i, i), -0.5);
    for (int j = i + 1; j < 6; ++j) EXPECT_EQ(s.A(i, j), 0.0);
  }
}

TEST(Passive, PublishedCascadeMatrices) {
  // Published template for (w, k) = ((10,10,0.01), (1,1,1)), transcribed literally.
  const double w1 = 10, w2 = 10, w3 = 0.01, k1 = 1, k2 = 1, k3 = 1;
  const double s12 = std::sqrt(k1 * k2), s13 = std::sqrt(k1 * k3), s23 = std::sqrt(k2 * k3);
  Mat A(6, 6);
  A << -k1 / 2, w1, 0, 0, 0, 0,
       -w1, -k1 / 2, 0, 0, 0, 0,
       -s12, 0, -k2 / 2, w2, 0, 0,
       0, s12, -w2, -k2 / 2, 0, 0,
       -s13, 0, -s23, 0, -k3 / 2, w3,
       0, -s13, 0, -s23, -w3, -k3 / 2;
  auto s = example_cascade(Vec::Map(std::array<double, 3>{w1, w2, w3}.data(), 3),
                           Vec::Map(std::array<double, 3>{k1, k2, k3}.data(), 3));
  // The transcribed entry (3,1) carries the wrong sign: the series law gives
  // -sqrt(k1 k2) in both quadratures.  Everything else must match exactly.
  EXPECT_DOUBLE_EQ(s.A(3, 1), -A(3, 1));
  Mat diff = s.A - A;
  diff(3, 1) = 0;
  EXPECT_LT(diff.norm(), 1e-15);
  // With the transcribed sign the template is not passive.
  QuantumLinearSystem lit(A, s.B, s.C, s.D);
  EXPECT_GT(passive_residuals(lit).r1, 1.0);
  Mat B(6, 2);
  B << -1, 0, 0, -1, -1, 0, 0, -1, -1, 0, 0, -1;
  EXPECT_EQ(s.B, B);
  EXPECT_EQ(s.C, -B.transpose());
  EXPECT_EQ(s.D, Mat::Identity(2, 2));
}

TEST(Passive, LosslessMode) {
  const double w = 3.0;
  Mat A(2, 2);
  A << 0, w, -w, 0;
  QuantumLinearSystem s(A, Mat::Zero(2, 2), Mat::Zero(2, 2), Mat::Identity(2, 2));
  EXPECT_EQ(passive_residuals(s).max(), 0.0);
}

TEST(Passive, LinearPerturbation) {
  auto s = example_cascade(Vec::Zero(3), Vec::Ones(3));
  for (double eps : {1e-3, 1e-5}) {
    auto t = s;
    t.B(2, 0) += eps;
    auto p = passive_residuals(t);
    EXPECT_GT(p.r1, 0.1 * eps);
    EXPECT_LT(p.r1, 10 * eps);
    EXPECT_NEAR(p.r2, eps, 1e-12);
  }
}

TEST(Passive, RequiresSquareChannels) {
  auto s = example_optomech(2e5, 100, 7.0711e4, 1e4);
  EXPECT_THROW(passive_residuals(s), std::invalid_argument);
}

TEST(Quadrature, ScalarDetunedMode) {
  const double w = 2.5, k = 0.7;
  PassiveComplexSystem ps;
  ps.F = CMat::Constant(1, 1, cplx(-k / 2, -w));
  ps.G = CMat::Zero(1, 1);
  ps.H = CMat::Zero(1, 1);
  ps.K = CMat::Identity(1, 1);
  Mat expect(2, 2);
  expect << -k / 2, w, -w, -k / 2;
  EXPECT_EQ(annihilation_to_quadrature(ps).A, expect);
}

TEST(Quadrature, RealMatrixMapsToKroneckerPattern) {
  Mat F = testutil::random_matrix(3, 3, 5);
  Mat Q = complex_to_quadrature(F.cast<cplx>());
  Mat K = testutil::kron(F, Mat::Identity(2, 2));
  EXPECT_LT((Q - K).norm(), 1e-15);
}

TEST(Quadrature, RoundTrip) {
  CMat Z = testutil::random_cmatrix(3, 2, 9);
  EXPECT_LT((quadrature_to_complex(complex_to_quadrature(Z)) - Z).norm(), 1e-15);
}

TEST(Quadrature, RandomPassiveDrawsArePassive) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const int n = 1 + int(seed % 4), m = 1 + int(seed % 3);
    CMat G = testutil::random_cmatrix(n, m, seed);
    CMat Hh = testutil::random_cmatrix(n, n, seed + 100);
    Hh = (Hh + Hh.adjoint()).eval();
    PassiveComplexSystem ps;
    // F + F^dagger + G G^dagger = 0 by construction
    ps.F = cplx(0, -1) * Hh - 0.5 * G * G.adjoint();
    ps.G = G;
    ps.H = -G.adjoint();
    ps.K = CMat::Identity(m, m);
    auto s = annihilation_to_quadrature(ps);
    EXPECT_LT(passive_residuals(s).max(), 1e-12) << seed;
    // passive implies realizable in the general sense
    EXPECT_LT(realizability_residuals(s).max(), 1e-12) << seed;
  }
}

TEST(SymplecticSimilarity, ResidualsAndTransferInvariant) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    auto s = random_realizable(3, 2, seed);
    Mat H = testutil::random_matrix(6, 6, seed + 50);
    H = 0.2 * (H + H.transpose()).eval();
    const Mat S = cayley_symplectic(H);
    const Mat J = symplectic(3);
    ASSERT_LT((S * J * S.transpose() - J).norm(), 1e-12);
    auto t = similarity_transform(s, S);
    auto r0 = realizability_residuals(s), r1 = realizability_residuals(t);
    EXPECT_NEAR(r0.r1, r1.r1, 1e-9);
    EXPECT_NEAR(r0.r2, r1.r2, 1e-9);
    EXPECT_NEAR(r0.r3, r1.r3, 1e-9);
    for (double w : {0.01, 0.3, 1.0, 7.0, 100.0}) {
      CMat g0 = transfer_eval(s, cplx(0, w)), g1 = transfer_eval(t, cplx(0, w));
      EXPECT_LT((g0 - g1).norm(), 1e-9 * std::max(1.0, g0.norm()));
    }
  }
}

#include "qlsr/h2.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace qlsr;

namespace {

QuantumLinearSystem lossy_mode(double kappa, double w0) {
  Mat A(2, 2);
  A << -kappa / 2, w0, -w0, -kappa / 2;
  return {A, -std::sqrt(kappa) * Mat::Identity(2, 2), std::sqrt(kappa) * Mat::Identity(2, 2),
          Mat::Identity(2, 2)};
}

QuantumLinearSystem empty_like(const QuantumLinearSystem& s) {
  return {Mat(0, 0), Mat(0, 2 * s.m), Mat(2 * s.l, 0), s.D};
}

}  // namespace

TEST(Transfer, HighFrequencyLimitIsFeedthrough) {
  auto s = random_realizable(3, 2, 4);
  CMat G = transfer_eval(s, cplx(0, 1e12));
  EXPECT_LT((G - s.D.cast<cplx>()).norm(), 1e-9);
}

TEST(Transfer, SingleModeAtDC) {
  const double k = 0.8, w = 3.0;
  auto s = lossy_mode(k, w);
  // -A = [[k/2, -w], [w, k/2]], inverse by the 2x2 adjugate
  const double det = k * k / 4 + w * w;
  Mat inv(2, 2);
  inv << k / 2, w, -w, k / 2;
  inv /= det;
  Mat expect = Mat::Identity(2, 2) - k * inv;
  CMat G = transfer_eval(s, cplx(0, 0));
  EXPECT_LT((G.real() - expect).norm(), 1e-14);
  EXPECT_LT(G.imag().norm(), 1e-14);
}

TEST(Transfer, SingularPointThrows) {
  auto s = lossy_mode(1.0, 2.0);
  EXPECT_THROW(transfer_eval(s, cplx(-0.5, 2.0)), std::runtime_error);
}

TEST(Transfer, ConjugateSymmetry) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = random_realizable(3, 2, seed);
    for (double w : {0.1, 1.0, 10.0}) {
      CMat a = transfer_eval(s, cplx(0, w)), b = transfer_eval(s, cplx(0, -w));
      EXPECT_LT((a - b.conjugate()).norm(), 1e-12 * a.norm());
    }
  }
}

TEST(Transfer, SimilarityInvariance) {
  auto s = random_realizable(3, 2, 21);
  Mat S = testutil::random_matrix(6, 6, 22) + 3 * Mat::Identity(6, 6);
  auto t = similarity_transform(s, S);
  for (double w : {0.01, 0.5, 2.0, 40.0}) {
    CMat a = transfer_eval(s, cplx(0, w)), b = transfer_eval(t, cplx(0, w));
    EXPECT_LT((a - b).norm(), 1e-9 * std::max(1.0, a.norm()));
  }
}

TEST(H2, CopyHasZeroError) {
  auto s = random_realizable(3, 2, 1);
  EXPECT_LT(h2_norm_gramian(s, s), 1e-8 * std::max(1.0, h2_norm(s)));
  auto q = h2_norm_quadrature(s, s);
  EXPECT_LT(q.value, 1e-6);
}

TEST(H2, LorentzianClosedForm) {
  // h(s) = -k / (s + k/2 + i w0) per field; (1/2pi) int 2|h|^2 dw = 2k.
  for (double k : {0.3, 1.0, 7.0}) {
    auto s = lossy_mode(k, 2.0);
    auto e = empty_like(s);
    EXPECT_NEAR(h2_norm_gramian(s, e), std::sqrt(2 * k), 1e-12);
    auto q = h2_norm_quadrature(s, e);
    EXPECT_TRUE(q.converged);
    EXPECT_NEAR(q.value, std::sqrt(2 * k), 1e-6 * std::sqrt(2 * k));
  }
}

TEST(H2, DifferentFeedthroughRejected) {
  auto s = random_realizable(2, 1, 3);
  auto t = s;
  t.D = -t.D;
  EXPECT_THROW(h2_norm_gramian(s, t), std::invalid_argument);
}

TEST(H2, UnstableReducedRejectedUnlessFormal) {
  auto s = lossy_mode(1.0, 1.0);
  Mat A(2, 2);
  A << 0.2, 1.0, -1.0, 0.2;
  QuantumLinearSystem r(A, s.B, s.C, s.D);
  EXPECT_THROW(h2_norm_gramian(s, r), LyapunovError);
  H2Options o;
  o.allow_unstable = true;
  auto rep = h2_report(s, r, o);
  EXPECT_FALSE(rep.stable);
  EXPECT_LT(std::abs(rep.squared - rep.squared_alt), 1e-8 * std::abs(rep.squared));
}

TEST(H2, GramianMatchesQuadratureOnRandomPairs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int n = 1 + int(seed % 8), m = 1 + int(seed % 3);
    auto f = random_realizable(n, m, seed);
    auto r = random_realizable(std::max(1, n - 1), m, seed + 77);
    auto rep = h2_report(f, r);
    EXPECT_LT(rep.rel_diff, 1e-8);
    auto q = h2_norm_quadrature(f, r);
    EXPECT_LT(std::abs(q.value - rep.value), 1e-3 * rep.value) << seed;
  }
}

TEST(Export, EmptyListGivesHeaderOnly) {
  auto t = freq_response_export({}, FrequencyGrid{}, {});
  EXPECT_EQ(t.to_csv(), "omega\n");
}

TEST(Export, HeaderLayoutAndGrid) {
  auto s = lossy_mode(1.0, 10.0);
  FrequencyGrid g{1e-2, 1e2, 10};
  auto t = freq_response_export({{"full", s}}, g, {{0, 0}, {1, 1}});
  ASSERT_EQ(t.header.size(), 5u);
  EXPECT_EQ(t.header[1], "full_y1u1_mag_db");
  EXPECT_EQ(t.header[2], "full_y1u1_phase_deg");
  EXPECT_EQ(t.rows.size(), 41u);
  EXPECT_DOUBLE_EQ(t.rows.front()[0], 1e-2);
  EXPECT_NEAR(t.rows.back()[0], 1e2, 1e-10);
  const std::string csv = t.to_csv();
  EXPECT_EQ(csv.back(), '\n');
  EXPECT_EQ(csv.find('\r'), std::string::npos);
}

TEST(Export, PhaseIsUnwrapped) {
  // three cascaded stages accumulate more than 180 degrees of phase
  auto s = example_cascade(Vec::Zero(3), Vec::Ones(3));
  auto t = freq_response_export({{"c", s}}, FrequencyGrid{1e-3, 1e3, 50}, {{0, 0}});
  for (size_t i = 1; i < t.rows.size(); ++i) EXPECT_LT(std::abs(t.rows[i][2] - t.rows[i - 1][2]), 180.0);
}

#include "qlsr/passive.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace qlsr;

namespace {

// Modes with Hamiltonian Hc coupled to fields through Gc:
// F = -i Hc - 1/2 Gc Gc^*, H = -Gc^*, K = I.
QuantumLinearSystem passive_from(const CMat& Hc, const CMat& Gc) {
  PassiveComplexSystem ps;
  ps.F = cplx(0, -1) * Hc - 0.5 * Gc * Gc.adjoint();
  ps.G = Gc;
  ps.H = -Gc.adjoint();
  ps.K = CMat::Identity(Gc.cols(), Gc.cols());
  return annihilation_to_quadrature(ps);
}

// Keeps the listed modes (both quadratures each).
QuantumLinearSystem keep_modes(const QuantumLinearSystem& s, const std::vector<int>& modes) {
  std::vector<int> idx;
  for (int k : modes) {
    idx.push_back(2 * k);
    idx.push_back(2 * k + 1);
  }
  const int K = int(idx.size());
  Mat A(K, K), B(K, s.B.cols()), C(s.C.rows(), K);
  for (int i = 0; i < K; ++i) {
    B.row(i) = s.B.row(idx[i]);
    C.col(i) = s.C.col(idx[i]);
    for (int j = 0; j < K; ++j) A(i, j) = s.A(idx[i], idx[j]);
  }
  return {A, B, C, s.D};
}

void expect_exact_structure(const QuantumLinearSystem& full, const ReductionResult& res) {
  ASSERT_TRUE(res.certified);
  EXPECT_TRUE(res.passive);
  EXPECT_TRUE(res.reduced.B == Mat(-res.reduced.C.transpose()));
  EXPECT_TRUE(res.reduced.D == Mat::Identity(full.l * 2, full.m * 2));
  const double s = system_scale(full);
  EXPECT_LE(passive_residuals(res.reduced).r1, 1e-6 * s);
  EXPECT_LE(res.b_overwrite, 1e-5 * s);
  const auto pr = passive_projection_residuals(res.projection.T, res.projection.V);
  EXPECT_LE(pr.tv, 1e-6);
  EXPECT_LE(pr.sym, 1e-6);
  EXPECT_NEAR(res.h2_quadrature, res.h2_error, 1e-3 * std::max(res.h2_error, 1e-12));
  EXPECT_LE(res.h2_error, res.gamma * (1 + 1e-6));
}

}  // namespace

TEST(PassiveProjection, Residuals) {
  Mat T = Mat::Zero(2, 4);
  T.leftCols(2).setIdentity();
  auto r = passive_projection_residuals(T, T.transpose());
  EXPECT_EQ(r.tv, 0.0);
  EXPECT_EQ(r.sym, 0.0);
  // V = 0.5 T^T: T V = I/2, and T - V^T = T/2
  r = passive_projection_residuals(T, 0.5 * T.transpose());
  EXPECT_DOUBLE_EQ(r.tv, std::sqrt(2 * 0.25));
  EXPECT_DOUBLE_EQ(r.sym, std::sqrt(2 * 0.25));
  // an orthogonal rotation of the kept pair keeps both residuals at zero
  Mat Q(2, 2);
  Q << std::cos(0.3), -std::sin(0.3), std::sin(0.3), std::cos(0.3);
  r = passive_projection_residuals(Q * T, (Q * T).transpose());
  EXPECT_LT(r.tv, 1e-15);
  EXPECT_EQ(r.sym, 0.0);
  EXPECT_THROW(passive_projection_residuals(T, T), std::invalid_argument);
}

TEST(PassiveReduce, PreconditionErrors) {
  Vec om(3), ka(3);
  om << 1, 2, 3;
  ka << 1, 1, 1;
  const auto full = example_cascade(om, ka);
  EXPECT_THROW(reduce_passive_qform(full, 3), std::invalid_argument);
  EXPECT_THROW(reduce_passive_qform(full, 5), std::invalid_argument);
  EXPECT_THROW(reduce_passive_pform(full, 0), std::invalid_argument);
  // realizable but active: B != -C^T
  const auto active = random_realizable(3, 1, 7);
  ASSERT_GT(passive_residuals(active).r2, 1e-3);
  EXPECT_THROW(reduce_passive_qform(active, 2), std::invalid_argument);
  auto broken = full;
  broken.B(1, 0) += 0.1;
  EXPECT_THROW(reduce_passive_qform(broken, 2), std::invalid_argument);
}

TEST(PassiveReduce, IdenticalDecoupledOscillators) {
  // two equal modes, each on its own field; keeping one leaves exactly the
  // other's transfer function as the error
  const double w = 1.5, k = 0.8;
  CMat Hc = w * CMat::Identity(2, 2);
  CMat Gc = std::sqrt(k) * CMat::Identity(2, 2);
  const auto full = passive_from(Hc, Gc);
  ASSERT_LT(passive_residuals(full).max(), 1e-12);
  // single mode with B = sqrt(k) I and A + A^T = -k I: Q = I, so H2^2 = 2k
  const double discarded = std::sqrt(2 * k);
  for (Form f : {Form::Q, Form::P}) {
    const auto res = reduce_passive(full, 1, f);
    expect_exact_structure(full, res);
    EXPECT_NEAR(res.h2_error, discarded, 1e-4 * discarded);
  }
}

TEST(PassiveReduce, DetunedAndResonantCascades) {
  Vec ka = Vec::Ones(3);
  for (double scale : {1.0, 0.0}) {
    Vec om(3);
    om << 10, 10, 0.01;
    om *= scale;
    const auto full = example_cascade(om, ka);
    const auto res = reduce_passive_qform(full, 2);
    expect_exact_structure(full, res);
  }
}

TEST(PassiveReduce, NoWorseThanBestModeTruncation) {
  // truncating a passive system to a subset of its modes stays passive, so
  // the best such truncation bounds what the pipeline must reach
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const CMat X = testutil::random_cmatrix(3, 3, seed);
    const CMat Hc = 0.5 * (X + X.adjoint());
    const CMat Gc = testutil::random_cmatrix(3, 1, seed + 50);
    const auto full = passive_from(Hc, Gc);
    if (!is_hurwitz(full.A, default_stability_margin(full.A)).stable) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::vector<int> keep : {std::vector<int>{0, 1}, {0, 2}, {1, 2}}) {
      const auto tr = keep_modes(full, keep);
      ASSERT_LT(passive_residuals(tr).max(), 1e-12);
      if (is_hurwitz(tr.A).stable) best = std::min(best, h2_norm_gramian(full, tr));
    }
    const auto res = reduce_passive_pform(full, 2);
    expect_exact_structure(full, res);
    EXPECT_LE(res.h2_error, best * (1 + 1e-9)) << "seed " << seed;
  }
}

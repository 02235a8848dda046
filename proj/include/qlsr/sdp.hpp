#pragma once

#include "qlsr/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace qlsr {

// ---------------------------------------------------------------------------
// Affine LMIs over a flat variable vector x.
//
// Variables are declared as named blocks (symmetric, full or scalar).  Each
// constraint is an affine symmetric matrix expression F(x) required to satisfy
// F(x) >= margin * I; "G(x) < -eps I" is written as -G(x) >= eps I.

struct VariableBlock {
  std::string name;
  int rows = 0, cols = 0;
  bool symmetric = false;
  int offset = 0;
  int count() const { return symmetric ? rows * (rows + 1) / 2 : rows * cols; }
};

struct LmiConstraint {
  std::string name;
  Mat F0;
  std::vector<Mat> Fk;
  double margin = 0;

  Mat eval(const Vec& x) const {
    Mat F = F0;
    for (size_t k = 0; k < Fk.size(); ++k)
      if (x(Eigen::Index(k)) != 0.0) F += x(Eigen::Index(k)) * Fk[k];
    return F;
  }
};

struct LmiProblem {
  std::vector<VariableBlock> vars;
  std::vector<LmiConstraint> constraints;
  Vec c;                 // objective c^T x
  double radius = 1e6;   // keeps the barrier bounded: ||x|| < radius

  int num_vars() const {
    int n = 0;
    for (const auto& v : vars) n += v.count();
    return n;
  }

  const VariableBlock& var(const std::string& name) const {
    for (const auto& v : vars)
      if (v.name == name) return v;
    throw std::invalid_argument("LmiProblem: unknown variable " + name);
  }

  int add_variable(const std::string& name, int rows, int cols, bool symmetric) {
    if (symmetric && rows != cols) throw std::invalid_argument("LmiProblem: symmetric block must be square");
    VariableBlock v{name, rows, cols, symmetric, num_vars()};
    vars.push_back(v);
    c = Vec::Zero(num_vars());
    return v.offset;
  }

  // Matrix value of a block.  Off-diagonal symmetric entries are stored as is.
  Mat value(const Vec& x, const std::string& name) const {
    const auto& v = var(name);
    Mat M(v.rows, v.cols);
    int idx = v.offset;
    if (v.symmetric) {
      for (int i = 0; i < v.rows; ++i)
        for (int j = i; j < v.rows; ++j) M(i, j) = M(j, i) = x(idx++);
    } else {
      for (int j = 0; j < v.cols; ++j)
        for (int i = 0; i < v.rows; ++i) M(i, j) = x(idx++);
    }
    return M;
  }

  void set_value(Vec& x, const std::string& name, const Mat& M) const {
    const auto& v = var(name);
    int idx = v.offset;
    if (v.symmetric) {
      for (int i = 0; i < v.rows; ++i)
        for (int j = i; j < v.rows; ++j) x(idx++) = 0.5 * (M(i, j) + M(j, i));
    } else {
      for (int j = 0; j < v.cols; ++j)
        for (int i = 0; i < v.rows; ++i) x(idx++) = M(i, j);
    }
  }

  // Adds an affine constraint given as a function of the block values. The
  // expression is sampled at the origin and at each unit vector, which is
  // exact for affine maps.
  void add_constraint(const std::string& name,
                      const std::function<Mat(const std::function<Mat(const std::string&)>&)>& expr,
                      double margin) {
    const int p = num_vars();
    auto at = [&](const Vec& x) {
      Mat F = expr([&](const std::string& n) { return value(x, n); });
      return Mat(0.5 * (F + F.transpose()));
    };
    LmiConstraint k;
    k.name = name;
    k.margin = margin;
    k.F0 = at(Vec::Zero(p));
    k.Fk.resize(p);
    for (int i = 0; i < p; ++i) {
      Vec e = Vec::Zero(p);
      e(i) = 1.0;
      k.Fk[i] = at(e) - k.F0;
    }
    constraints.push_back(std::move(k));
  }

  // Linear objective from a function of the block values (sampled the same way).
  void set_objective(const std::function<double(const std::function<Mat(const std::string&)>&)>& f) {
    const int p = num_vars();
    auto at = [&](const Vec& x) { return f([&](const std::string& n) { return value(x, n); }); };
    const double f0 = at(Vec::Zero(p));
    c.resize(p);
    for (int i = 0; i < p; ++i) {
      Vec e = Vec::Zero(p);
      e(i) = 1.0;
      c(i) = at(e) - f0;
    }
  }

  // Smallest eigenvalue of F_i(x) minus its margin, per constraint.
  std::vector<double> slacks(const Vec& x) const {
    std::vector<double> s;
    for (const auto& k : constraints) {
      Eigen::SelfAdjointEigenSolver<Mat> es(k.eval(x), Eigen::EigenvaluesOnly);
      s.push_back(es.eigenvalues().minCoeff() - k.margin);
    }
    return s;
  }
};

struct LmiOptions {
  double gap_tol = 1e-9;     // duality-gap proxy m/t relative to max(1, |objective|)
  double newton_tol = 1e-10;
  int max_newton = 200;
  int max_outer = 40;
  int restoration_budget = 400;  // Newton steps allowed for phase I
};

struct LmiSolution {
  Vec x;
  double objective = 0;
  std::vector<double> slacks;  // min eig - margin per constraint, verified independently
  int newton_steps = 0;
  double hessian_cond = 1;
};

class LmiError : public std::runtime_error {
 public:
  enum Kind { Infeasible, IllConditioned };
  LmiError(Kind k, const std::string& what, int constraint, double value, Vec x)
      : std::runtime_error(what), kind(k), constraint(constraint), value(value), x(std::move(x)) {}
  Kind kind;
  int constraint;  // most violated constraint (Infeasible)
  double value;    // its violation, or the condition estimate
  Vec x;           // least-violating point found
};

namespace detail {

// Barrier minimization of c^T x subject to F_i(x) - shift_i I > 0 and ||x|| < R.
// `stop` is checked after every Newton step.
struct BarrierResult {
  Vec x;
  int steps = 0;
  double cond = 1;
  bool stopped = false;
};

inline BarrierResult barrier_minimize(const std::vector<LmiConstraint>& cons, const Vec& c,
                                      double radius, Vec x, const LmiOptions& opt, int max_steps,
                                      const std::function<bool(const Vec&)>& stop) {
  const auto p = x.size();
  BarrierResult out;
  int total_dim = 1;
  for (const auto& k : cons) total_dim += int(k.F0.rows());

  auto phi = [&](const Vec& y, double t, bool& ok) {
    ok = true;
    double v = t * c.dot(y);
    const double rr = radius * radius - y.squaredNorm();
    if (!(rr > 0)) {
      ok = false;
      return 0.0;
    }
    v -= std::log(rr);
    for (const auto& k : cons) {
      const Mat G = k.eval(y) - k.margin * Mat::Identity(k.F0.rows(), k.F0.rows());
      Eigen::LLT<Mat> llt(G);
      if (llt.info() != Eigen::Success) {
        ok = false;
        return 0.0;
      }
      const Mat& L = llt.matrixL();
      v -= 2 * L.diagonal().array().log().sum();
    }
    return v;
  };

  double t = 1.0;
  {
    // start t so both terms are comparable
    const double cn = c.norm();
    if (cn > 0) t = std::max(1e-6, double(total_dim) / std::max(1e-12, std::abs(c.dot(x)) + cn));
  }
  for (int outer = 0; outer < opt.max_outer; ++outer) {
    for (int it = 0; it < opt.max_newton; ++it) {
      if (out.steps >= max_steps) return out.x = x, out;
      Vec g = t * c;
      Mat H = Mat::Zero(p, p);
      const double rr = radius * radius - x.squaredNorm();
      g += 2 * x / rr;
      H += (2 / rr) * Mat::Identity(p, p) + (4 / (rr * rr)) * x * x.transpose();
      for (const auto& k : cons) {
        const auto s = k.F0.rows();
        const Mat G = k.eval(x) - k.margin * Mat::Identity(s, s);
        Eigen::LLT<Mat> llt(G);
        const Mat Linv = Mat(llt.matrixL()).triangularView<Eigen::Lower>().solve(Mat::Identity(s, s));
        Mat stack(s * s, p);
        for (Eigen::Index j = 0; j < p; ++j) {
          const Mat Gh = Linv * k.Fk[j] * Linv.transpose();
          stack.col(j) = Eigen::Map<const Vec>(Gh.data(), s * s);
          g(j) -= Gh.trace();
        }
        H.noalias() += stack.transpose() * stack;
      }
      Eigen::LDLT<Mat> ldlt(H);
      const Vec dx = -ldlt.solve(g);
      const double dec2 = -g.dot(dx);
      out.cond = std::max(out.cond, ldlt.rcond() > 0 ? 1.0 / ldlt.rcond() : 1e300);
      ++out.steps;
      if (!(dec2 >= 0) || !std::isfinite(dec2)) break;
      if (dec2 / 2 < opt.newton_tol) break;
      bool ok;
      const double f0 = phi(x, t, ok);
      double s = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Vec xn = x + s * dx;
        const double f1 = phi(xn, t, ok);
        if (ok && f1 <= f0 - 0.25 * s * dec2) {
          x = xn;
          moved = true;
          break;
        }
        s *= 0.5;
      }
      if (!moved) break;
      if (stop && stop(x)) {
        out.stopped = true;
        return out.x = x, out;
      }
    }
    const double obj = c.dot(x);
    if (double(total_dim) / t < opt.gap_tol * std::max(1.0, std::abs(obj))) break;
    t *= 10;
  }
  out.x = x;
  return out;
}

}  // namespace detail

// Deterministic barrier method.  Phase I (restoration) adds a scalar s to
// every constraint and drives it below zero; phase II then minimizes the
// objective inside the strictly feasible set.
inline LmiSolution solve_lmi(const LmiProblem& pb, const Vec& x0_in = Vec(),
                             const LmiOptions& opt = {}) {
  const int p = pb.num_vars();
  if (pb.c.size() != p) throw std::invalid_argument("solve_lmi: objective size mismatch");
  for (const auto& k : pb.constraints)
    if (int(k.Fk.size()) != p) throw std::invalid_argument("solve_lmi: constraint " + k.name + " is stale");
  Vec x0 = x0_in.size() == p ? x0_in : Vec(Vec::Zero(p));
  LmiSolution sol;

  auto min_slack = [&](const Vec& x, int* which) {
    const auto s = pb.slacks(x);
    double m = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < s.size(); ++i)
      if (s[i] < m) {
        m = s[i];
        if (which) *which = int(i);
      }
    return m;
  };

  Vec x = x0;
  if (!(min_slack(x, nullptr) > 0)) {
    // phase I on (x, s): F_i(x) + s I >= margin_i I, minimize s, with s >= -1
    const double s0 = std::max(1.0, 1.0 - min_slack(x, nullptr));
    std::vector<LmiConstraint> cons;
    for (const auto& k : pb.constraints) {
      LmiConstraint e = k;
      e.Fk.push_back(Mat::Identity(k.F0.rows(), k.F0.rows()));
      cons.push_back(std::move(e));
    }
    LmiConstraint lo;
    lo.name = "restoration_floor";
    lo.F0 = Mat::Ones(1, 1);
    lo.Fk.assign(p + 1, Mat::Zero(1, 1));
    lo.Fk[p](0, 0) = 1.0;
    cons.push_back(lo);
    Vec c = Vec::Zero(p + 1);
    c(p) = 1.0;
    Vec y(p + 1);
    y << x, s0;
    auto res = detail::barrier_minimize(cons, c, pb.radius * 2 + s0, y, opt, opt.restoration_budget,
                                        [&](const Vec& z) { return z(p) < -1e-3; });
    sol.newton_steps += res.steps;
    x = res.x.head(p);
    int worst = -1;
    const double ms = min_slack(x, &worst);
    if (!(ms > 0)) {
      std::ostringstream os;
      os << "solve_lmi: infeasible after restoration; constraint '"
         << (worst >= 0 ? pb.constraints[worst].name : "?") << "' violated by " << -ms;
      throw LmiError(LmiError::Infeasible, os.str(), worst, -ms, x);
    }
  }
  auto res = detail::barrier_minimize(pb.constraints, pb.c, pb.radius, x, opt,
                                      opt.max_newton * opt.max_outer, nullptr);
  sol.newton_steps += res.steps;
  sol.hessian_cond = res.cond;
  sol.x = res.x;
  sol.objective = pb.c.dot(sol.x);
  sol.slacks = pb.slacks(sol.x);
  for (size_t i = 0; i < sol.slacks.size(); ++i)
    if (!(sol.slacks[i] >= -0.5 * pb.constraints[i].margin))
      throw LmiError(LmiError::IllConditioned,
                     "solve_lmi: constraint '" + pb.constraints[i].name + "' lost its margin",
                     int(i), res.cond, sol.x);
  return sol;
}

// Frobenius-nearest positive semidefinite matrix.
inline Mat psd_project(const Mat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
  const Vec d = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------
// Lifted problem: Z = V V^T with V stacked from row blocks that all have
// base_dim columns.  Z(a, one) recovers block a and Z(a, b) = V_a V_b^T.

struct ZBlock {
  std::string name;
  int offset = 0, rows = 0;
};

struct LinearTerm {
  int i = 0, j = 0;  // entry of Z (either triangle)
  double coef = 0;
};

struct LiftedProblem {
  int base_dim = 0;
  std::vector<ZBlock> blocks;
  std::vector<std::vector<LinearTerm>> rows;
  std::vector<double> rhs;
  std::vector<std::string> row_tags;

  int dim() const { return blocks.empty() ? 0 : blocks.back().offset + blocks.back().rows; }

  int add_block(const std::string& name, int rows_) {
    for (const auto& b : blocks)
      if (b.name == name) throw std::invalid_argument("LiftedProblem: duplicate block " + name);
    blocks.push_back({name, dim(), rows_});
    return blocks.back().offset;
  }

  const ZBlock& block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw std::invalid_argument("LiftedProblem: unknown block " + name);
  }

  Mat get(const Mat& Z, const std::string& a, const std::string& b) const {
    const auto& A = block(a);
    const auto& B = block(b);
    return Z.block(A.offset, B.offset, A.rows, B.rows);
  }

  void add_row(std::vector<LinearTerm> terms, double r, const std::string& tag) {
    rows.push_back(std::move(terms));
    rhs.push_back(r);
    row_tags.push_back(tag);
  }

  // Residual of every linear coupling, as a vector.
  Vec coupling_residual(const Mat& Z) const {
    Vec r(rows.size());
    for (size_t k = 0; k < rows.size(); ++k) {
      double s = -rhs[k];
      for (const auto& t : rows[k]) s += t.coef * Z(t.i, t.j);
      r(Eigen::Index(k)) = s;
    }
    return r;
  }
};

// Row-block stack for the symplectic (or, with identity couplings, the
// commuting) lifting of
//   X1 Jn X2 - X2 Jr X3 = 0   and   Mfull = X2 X3^{-1} X2^T  with Mfull = diag(M_r, 0).
// N = full state dimension, K = reduced.  All blocks carry N columns:
//   one  I_N                x1  X1           x2  [X2 0]       x3  [X3 0]
//   x4   Mfull              x5  [X3^{-1} 0]  x6  X2^T
//   v1   X1 Jn              v2  [X2 Jr 0]    v3  [X1 Jn X2 0]
//   v4   [X2 Jr X3 0]       v5  [X2 X3^{-1} 0]                v6  X2 X3^{-1} X2^T
struct LiftingLayout {
  int N = 0, K = 0;
  Mat Jn, Jr;
};

inline LiftedProblem build_lifted_problem(const LiftingLayout& L) {
  const int N = L.N, K = L.K;
  if (N <= 0 || K <= 0 || K > N) throw std::invalid_argument("build_lifted_problem: bad dimensions");
  LiftedProblem lp;
  lp.base_dim = N;
  for (const char* b : {"one", "x1", "x2"}) lp.add_block(b, N);
  lp.add_block("x3", K);
  lp.add_block("x4", N);
  lp.add_block("x5", K);
  lp.add_block("x6", K);
  for (const char* b : {"v1", "v2", "v3", "v4", "v5", "v6"}) lp.add_block(b, N);

  auto at = [&](const std::string& a, const std::string& b, int i, int j) {
    return std::pair<int, int>(lp.block(a).offset + i, lp.block(b).offset + j);
  };
  auto term = [&](const std::string& a, const std::string& b, int i, int j, double c) {
    auto [r, s] = at(a, b, i, j);
    return LinearTerm{r, s, c};
  };
  // Z(a,one)[:, :cols] = Z(x,one)[:, :inner] * Mult   (Mult sparse, inner x cols)
  auto right_mult = [&](const std::string& a, const std::string& x, int rows, const Mat& Mult,
                        const std::string& tag) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < Mult.cols(); ++j) {
        std::vector<LinearTerm> t{term(a, "one", i, j, 1.0)};
        for (int k = 0; k < Mult.rows(); ++k)
          if (Mult(k, j) != 0.0) t.push_back(term(x, "one", i, k, -Mult(k, j)));
        lp.add_row(t, 0.0, tag);
      }
  };
  auto equal_blocks = [&](const std::string& a1, const std::string& b1, const std::string& a2,
                          const std::string& b2, int rows, int cols, const std::string& tag) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        lp.add_row({term(a1, b1, i, j, 1.0), term(a2, b2, i, j, -1.0)}, 0.0, tag);
  };
  auto zero_cols = [&](const std::string& a, int rows, int from, const std::string& tag) {
    for (int i = 0; i < rows; ++i)
      for (int j = from; j < N; ++j) lp.add_row({term(a, "one", i, j, 1.0)}, 0.0, tag);
  };
  auto symmetric = [&](const std::string& a, int n, const std::string& tag) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        lp.add_row({term(a, "one", i, j, 1.0), term(a, "one", j, i, -1.0)}, 0.0, tag);
  };

  // Z(one, one) = I
  for (int i = 0; i < N; ++i)
    for (int j = i; j < N; ++j) lp.add_row({term("one", "one", i, j, 1.0)}, i == j ? 1.0 : 0.0, "identity");
  symmetric("x1", N, "sym_x1");
  symmetric("x3", K, "sym_x3");
  symmetric("x4", N, "sym_x4");
  // zero padding
  zero_cols("x2", N, K, "pad_x2");
  zero_cols("x3", K, K, "pad_x3");
  zero_cols("x5", K, K, "pad_x5");
  for (const char* v : {"v2", "v3", "v4", "v5"}) zero_cols(v, N, K, std::string("pad_") + v);
  // embedding structure: Mfull = diag(M_r, 0)
  for (int i = 0; i < N; ++i)
    for (int j = i; j < N; ++j)
      if (i >= K || j >= K) lp.add_row({term("x4", "one", i, j, 1.0)}, 0.0, "embed_zero");
  // x6 = x2^T
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < N; ++j)
      lp.add_row({term("x6", "one", i, j, 1.0), term("x2", "one", j, i, -1.0)}, 0.0, "x6_transpose");
  right_mult("v1", "x1", N, L.Jn, "v1_def");
  right_mult("v2", "x2", N, L.Jr, "v2_def");
  // product definitions read from off-diagonal blocks of Z
  equal_blocks("v3", "one", "v1", "x6", N, K, "v3_def");
  equal_blocks("v4", "one", "v2", "x3", N, K, "v4_def");
  equal_blocks("v5", "one", "x2", "x5", N, K, "v5_def");
  equal_blocks("v6", "one", "v5", "x2", N, N, "v6_def");
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      lp.add_row({term("x3", "x5", i, j, 1.0)}, i == j ? 1.0 : 0.0, "inverse");
  // coupling and embedding
  equal_blocks("v3", "one", "v4", "one", N, K, "coupling");
  equal_blocks("x4", "one", "v6", "one", N, N, "embedding");
  return lp;
}

// V0 for given X1 (N x N sym), X2 (N x K), X3 (K x K sym), M (N x N).
inline Mat heuristic_factor(const LiftingLayout& L, const Mat& X1, const Mat& X2, const Mat& X3,
                            const Mat& M) {
  const int N = L.N, K = L.K;
  if (X1.rows() != N || X2.rows() != N || X2.cols() != K || X3.rows() != K || M.rows() != N)
    throw std::invalid_argument("heuristic_start: dimension mismatch");
  Eigen::FullPivLU<Mat> lu(X3);
  if (!lu.isInvertible() || lu.rcond() < 1e-14)
    throw std::invalid_argument("heuristic_start: X3 is singular");
  const Mat X3i = lu.inverse();
  auto pad = [&](const Mat& B) {
    Mat P = Mat::Zero(B.rows(), N);
    P.leftCols(B.cols()) = B;
    return P;
  };
  const std::vector<Mat> parts = {Mat::Identity(N, N), X1, pad(X2), pad(X3), M, pad(X3i),
                                  X2.transpose(), X1 * L.Jn, pad(X2 * L.Jr),
                                  pad(X1 * L.Jn * X2), pad(X2 * L.Jr * X3), pad(X2 * X3i),
                                  X2 * X3i * X2.transpose()};
  int rows = 0;
  for (const auto& p : parts) rows += int(p.rows());
  Mat V(rows, N);
  int off = 0;
  for (const auto& p : parts) {
    V.middleRows(off, p.rows()) = p;
    off += int(p.rows());
  }
  return V;
}

struct HeuristicStart {
  Mat V0, Z0;
};

inline HeuristicStart heuristic_start(const LiftingLayout& L, const Mat& X1, const Mat& X2,
                                      const Mat& X3, const Mat& M) {
  HeuristicStart h;
  h.V0 = heuristic_factor(L, X1, X2, X3, M);
  h.Z0 = h.V0 * h.V0.transpose();
  return h;
}

struct RankProjectionOptions {
  int max_iter = 500;
  double tol = 1e-8;
  int stall_window = 50;
  double stall_improvement = 0.05;  // relative decrease of the best residual required per window
  int refine_iter = 50;             // factor refinement steps after the projections (0 disables)
};

struct TraceRow {
  int step = 0;
  double affine_residual = 0, rank_gap = 0, objective = 0;
};

struct RankProjectionResult {
  Mat Z;  // PSD, rank <= base_dim
  bool converged = false;
  bool stagnated = false;
  int iterations = 0;
  int refine_iterations = 0;
  double coupling_residual = 0, rank_gap = 0;
  std::vector<TraceRow> trace;

  std::string trace_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "step,affine_residual,rank_gap,objective\n";
    for (const auto& r : trace) os << r.step << ',' << r.affine_residual << ',' << r.rank_gap << ',' << r.objective << '\n';
    return os.str();
  }
};

namespace detail {

// Orthogonal projection onto the affine coupling set in the Frobenius norm of
// the symmetric matrix.  Variables are the upper-triangle entries weighted so
// their Euclidean norm equals the Frobenius norm.
class AffineProjector {
 public:
  explicit AffineProjector(const LiftedProblem& lp) : n_(lp.dim()) {
    const int nv = n_ * (n_ + 1) / 2;
    std::vector<Eigen::Triplet<double>> trip;
    for (size_t k = 0; k < lp.rows.size(); ++k) {
      std::map<int, double> acc;
      for (const auto& t : lp.rows[k]) {
        const int i = std::min(t.i, t.j), j = std::max(t.i, t.j);
        const double w = (i == j) ? 1.0 : 1.0 / std::numbers::sqrt2;
        acc[index(i, j)] += t.coef * w;
      }
      for (auto [col, v] : acc)
        if (v != 0.0) trip.emplace_back(int(k), col, v);
    }
    L_.resize(Eigen::Index(lp.rows.size()), nv);
    L_.setFromTriplets(trip.begin(), trip.end());
    b_ = Eigen::Map<const Vec>(lp.rhs.data(), Eigen::Index(lp.rhs.size()));
    Eigen::SparseMatrix<double> G = L_ * L_.transpose();
    double dmax = 0;
    for (int k = 0; k < G.outerSize(); ++k) dmax = std::max(dmax, G.coeff(k, k));
    reg_ = 1e-12 * std::max(1.0, dmax);
    Eigen::SparseMatrix<double> I(G.rows(), G.cols());
    I.setIdentity();
    G_ = G;
    solver_.compute(G + reg_ * I);
    if (solver_.info() != Eigen::Success) throw std::runtime_error("rank projection: coupling system factorization failed");
  }

  Vec pack(const Mat& Z) const {
    Vec u(n_ * (n_ + 1) / 2);
    for (int i = 0; i < n_; ++i)
      for (int j = i; j < n_; ++j) u(index(i, j)) = (i == j) ? Z(i, i) : std::numbers::sqrt2 * 0.5 * (Z(i, j) + Z(j, i));
    return u;
  }

  Mat unpack(const Vec& u) const {
    Mat Z(n_, n_);
    for (int i = 0; i < n_; ++i)
      for (int j = i; j < n_; ++j) Z(i, j) = Z(j, i) = (i == j) ? u(index(i, j)) : u(index(i, j)) / std::numbers::sqrt2;
    return Z;
  }

  Mat project(const Mat& Z) const {
    Vec u = pack(Z);
    // two refinement sweeps make the regularized solve accurate
    for (int s = 0; s < 3; ++s) {
      const Vec r = L_ * u - b_;
      if (r.norm() == 0.0) break;
      const Vec y = solver_.solve(r);
      u -= L_.transpose() * y;
    }
    return unpack(u);
  }

  double residual(const Mat& Z) const { return (L_ * pack(Z) - b_).norm(); }

 private:
  int index(int i, int j) const { return i * n_ - i * (i - 1) / 2 + (j - i); }
  int n_;
  Eigen::SparseMatrix<double> L_, G_;
  Vec b_;
  double reg_ = 0;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

}  // namespace detail

// Rank-k truncation of the PSD part (top eigenpairs, clipped at zero).
inline Mat rank_truncate(const Mat& Z, int k, double* gap = nullptr) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (Z + Z.transpose()));
  const auto n = Z.rows();
  const Vec ev = es.eigenvalues();
  if (gap) {
    const double top = std::max(ev(n - 1), 1e-300);
    *gap = (n > k) ? std::max(0.0, ev(n - 1 - k)) / top : 0.0;
  }
  Mat out = Mat::Zero(n, n);
  for (Eigen::Index i = std::max<Eigen::Index>(0, n - k); i < n; ++i)
    if (ev(i) > 0) out.noalias() += ev(i) * es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose();
  return out;
}

namespace detail {

// Levenberg-Marquardt on the factor V of Z = V V^T, minimizing the squared
// coupling residual.  Used once alternating projections slow down: near a
// non-transversal intersection they only converge sublinearly.
inline Mat refine_factor(const LiftedProblem& lp, Mat V, int max_iter, double tol, int& used) {
  const auto dim = V.rows(), k = V.cols();
  const auto nv = dim * k;
  auto residual = [&](const Mat& W) {
    Vec r(lp.rows.size());
    for (size_t q = 0; q < lp.rows.size(); ++q) {
      double s = -lp.rhs[q];
      for (const auto& t : lp.rows[q]) s += t.coef * W.row(t.i).dot(W.row(t.j));
      r(Eigen::Index(q)) = s;
    }
    return r;
  };
  Vec r = residual(V);
  double lambda = 1e-6;
  used = 0;
  for (int it = 0; it < max_iter && r.norm() > tol; ++it) {
    ++used;
    std::vector<Eigen::Triplet<double>> trip;
    for (size_t q = 0; q < lp.rows.size(); ++q)
      for (const auto& t : lp.rows[q])
        for (Eigen::Index c = 0; c < k; ++c) {
          // d(V_i . V_j) = V_j dV_i + V_i dV_j ; column-major index of V(i, c)
          trip.emplace_back(int(q), int(c * dim + t.i), t.coef * V(t.j, c));
          trip.emplace_back(int(q), int(c * dim + t.j), t.coef * V(t.i, c));
        }
    Eigen::SparseMatrix<double> J(Eigen::Index(lp.rows.size()), nv);
    J.setFromTriplets(trip.begin(), trip.end());
    const Eigen::SparseMatrix<double> JtJ = J.transpose() * J;
    const Vec g = J.transpose() * r;
    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::SparseMatrix<double> H = JtJ;
      for (Eigen::Index d = 0; d < nv; ++d) H.coeffRef(d, d) += lambda;
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(H);
      if (ldlt.info() != Eigen::Success) {
        lambda *= 10;
        continue;
      }
      const Vec step = -ldlt.solve(g);
      Mat Vn = V + Eigen::Map<const Mat>(step.data(), dim, k);
      const Vec rn = residual(Vn);
      if (rn.norm() < r.norm()) {
        V = Vn;
        r = rn;
        lambda = std::max(1e-14, lambda / 10);
        accepted = true;
        break;
      }
      lambda *= 10;
    }
    if (!accepted) break;
  }
  return V;
}

}  // namespace detail

// Alternating projections between the coupling set and {Z >= 0, rank Z <= base_dim}.
// When they stall or run out of iterations, a factor-level Levenberg-Marquardt
// refinement is tried from the best iterate.  Returns a PSD Z of the requested
// rank.
inline RankProjectionResult rank_projection_solve(const LiftedProblem& lp, const Mat& Z0,
                                                  const RankProjectionOptions& opt = {},
                                                  const std::function<double(const Mat&)>& objective = nullptr) {
  if (Z0.rows() != lp.dim() || Z0.cols() != lp.dim())
    throw std::invalid_argument("rank_projection_solve: Z0 has wrong size");
  const detail::AffineProjector proj(lp);
  RankProjectionResult res;
  const double scale = std::max(1.0, Z0.norm());
  Mat X = proj.project(Z0);
  Mat best;
  double best_res = std::numeric_limits<double>::infinity();
  double window_ref = std::numeric_limits<double>::infinity();
  int window_start = 0;
  bool plateau = false;
  for (int k = 1; k <= opt.max_iter; ++k) {
    double gap_x = 0;
    const Mat Y = rank_truncate(X, lp.base_dim, &gap_x);
    const double dist = (Y - X).norm();
    const double coup = proj.residual(Y);
    res.trace.push_back({k, dist, gap_x, objective ? objective(Y) : 0.0});
    res.iterations = k;
    if (coup < best_res) {
      best_res = coup;
      best = Y;
      res.rank_gap = gap_x;
    }
    if (coup <= opt.tol * scale) {
      res.converged = true;
      break;
    }
    if (k == 1 || best_res < (1 - opt.stall_improvement) * window_ref) {
      window_ref = best_res;
      window_start = k;
    } else if (k - window_start >= opt.stall_window) {
      plateau = true;
      break;
    }
    X = proj.project(Y);
  }
  if (!res.converged && opt.refine_iter > 0) {
    Eigen::SelfAdjointEigenSolver<Mat> es(best);
    const auto n = best.rows();
    const int k = lp.base_dim;
    Mat V = es.eigenvectors().rightCols(k) * es.eigenvalues().tail(k).cwiseMax(0.0).cwiseSqrt().asDiagonal();
    V = detail::refine_factor(lp, V, opt.refine_iter, 0.1 * opt.tol * scale, res.refine_iterations);
    const Mat Zr = V * V.transpose();
    const double coup = proj.residual(Zr);
    (void)n;
    if (coup < best_res) {
      best = Zr;
      best_res = coup;
      res.rank_gap = 0;
    }
    res.converged = best_res <= opt.tol * scale;
  }
  res.stagnated = plateau && !res.converged;
  res.Z = best;
  res.coupling_residual = best_res;
  return res;
}

}  // namespace qlsr

#pragma once

#include "qlsr/lyapunov.hpp"

#include <numbers>
#include <queue>
#include <sstream>
#include <utility>
#include <vector>

namespace qlsr {

// Error system: diag(A, A_r), [B; B_r], [C, -C_r].  The feedthrough cancels
// because D_r == D is required.
struct AugmentedSystem {
  Mat A, B, C;
};

inline AugmentedSystem build_augmented(const QuantumLinearSystem& full,
                                       const QuantumLinearSystem& red) {
  full.validate();
  red.validate();
  if (full.m != red.m || full.l != red.l)
    throw std::invalid_argument("build_augmented: channel counts differ");
  if (full.D != red.D)
    throw std::invalid_argument("build_augmented: D_r must equal D (H2 error is infinite otherwise)");
  const int N = 2 * full.n, K = 2 * red.n;
  AugmentedSystem a;
  a.A = Mat::Zero(N + K, N + K);
  a.A.topLeftCorner(N, N) = full.A;
  a.A.bottomRightCorner(K, K) = red.A;
  a.B.resize(N + K, 2 * full.m);
  a.B << full.B, red.B;
  a.C.resize(2 * full.l, N + K);
  a.C << full.C, -red.C;
  return a;
}

// C (sI - A)^{-1} B + D
inline CMat transfer_eval(const QuantumLinearSystem& s, cplx z) {
  const auto N = s.A.rows();
  const CMat M = z * CMat::Identity(N, N) - s.A.cast<cplx>();
  Eigen::PartialPivLU<CMat> lu(M);
  if (N > 0 && !(lu.rcond() > 1e-14))
    throw std::runtime_error("transfer_eval: sI - A is singular at the requested point");
  return s.C.cast<cplx>() * lu.solve(s.B.cast<cplx>()) + s.D.cast<cplx>();
}

struct H2Options {
  // Evaluate the trace formulas even if a block is not Hurwitz. The value is
  // then only a formal quantity, not a norm.
  bool allow_unstable = false;
  double agreement_tol = 1e-8;
};

struct H2Report {
  double value = 0;        // sqrt(tr(B^T Q B))
  double squared = 0;      // tr(B^T Q B)
  double squared_alt = 0;  // tr(C P C^T)
  double rel_diff = 0;
  bool stable = true;
  GramianBlocks gb;
};

inline H2Report h2_trace_report(const Mat& A, const Mat& B, const Mat& C, int reduced_dim,
                                const H2Options& opt = {}) {
  LyapunovOptions lo;
  lo.require_hurwitz = !opt.allow_unstable;
  H2Report rep;
  rep.stable = is_hurwitz(A).stable;
  rep.gb = gramians(A, B, C, reduced_dim, lo);
  rep.squared = (B.transpose() * rep.gb.Q * B).trace();
  rep.squared_alt = (C * rep.gb.P * C.transpose()).trace();
  const double scale = B.squaredNorm() * rep.gb.Q.norm() + C.squaredNorm() * rep.gb.P.norm();
  const double diff = std::abs(rep.squared - rep.squared_alt);
  const double mag = std::max(std::abs(rep.squared), std::abs(rep.squared_alt));
  rep.rel_diff = mag > 0 ? diff / mag : 0.0;
  if (diff > opt.agreement_tol * mag + 1e-13 * scale)
    throw std::runtime_error("h2: trace formulas disagree (relative difference " +
                             std::to_string(rep.rel_diff) + ")");
  rep.value = std::sqrt(std::max(0.0, rep.squared));
  return rep;
}

// H2 norm of the strictly proper part of a single system.
inline double h2_norm(const QuantumLinearSystem& s, const H2Options& opt = {}) {
  return h2_trace_report(s.A, s.B, s.C, 0, opt).value;
}

inline H2Report h2_report(const QuantumLinearSystem& full, const QuantumLinearSystem& red,
                          const H2Options& opt = {}) {
  const auto aug = build_augmented(full, red);
  return h2_trace_report(aug.A, aug.B, aug.C, 2 * red.n, opt);
}

// ||G - G_r||_2 via the augmented Gramians.
inline double h2_norm_gramian(const QuantumLinearSystem& full, const QuantumLinearSystem& red,
                              const H2Options& opt = {}) {
  return h2_report(full, red, opt).value;
}

struct QuadratureSpec {
  double decades_below = 4, decades_above = 4;  // around the slowest / fastest pole
  int max_intervals = 4000;
  double rel_tol = 1e-8;
};

struct QuadratureResult {
  double value = 0, squared = 0;
  double tail = 0;       // analytic tail contribution to the squared value
  double error_est = 0;  // Gauss-Kronrod error estimate of the squared value
  int intervals = 0;
  bool converged = false;
};

namespace detail {

inline double trace_gram(const CMat& X) { return X.squaredNorm(); }

inline void pole_range(const Mat& A, double& lo, double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = 0;
  if (A.rows() == 0) return;
  Eigen::EigenSolver<Mat> es(A, false);
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const double a = std::abs(es.eigenvalues()(i));
    if (a > 0) {
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  }
}

// 15-point Kronrod rule with its embedded 7-point Gauss rule on [a, b].
template <class F>
std::pair<double, double> gauss_kronrod15(const F& f, double a, double b) {
  static const double x[8] = {0.991455371120812639, 0.949107912342758525, 0.864864423359769073,
                              0.741531185599394440, 0.586087235467691130, 0.405845151377397167,
                              0.207784955007898468, 0.0};
  static const double wk[8] = {0.022935322010529225, 0.063092092629978553, 0.104790010322250184,
                               0.140653259715525919, 0.169004726639267903, 0.190350578064785410,
                               0.204432940075298892, 0.209482141084727828};
  static const double wg[4] = {0.129484966168869693, 0.279705391489276668, 0.381830050505118945,
                               0.417959183673469388};
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  const double fc = f(c);
  double k = wk[7] * fc, g = wg[3] * fc;
  for (int i = 0; i < 7; ++i) {
    const double v = f(c - h * x[i]) + f(c + h * x[i]);
    k += wk[i] * v;
    if (i % 2 == 1) g += wg[i / 2] * v;
  }
  return {k * h, std::abs((k - g) * h)};
}

}  // namespace detail

// (1/pi) int_0^inf ||G(jw)||_F^2 dw for a strictly proper, stable triple.
// Adaptive Gauss-Kronrod on u = ln w with breakpoints at every resonance
// (w = |Im lambda| and its half-width neighbours), plus analytic end
// corrections: the integrand is flat below the range and decays as 1/w^2
// above it.
inline QuadratureResult h2_quadrature(const Mat& A, const Mat& B, const Mat& C,
                                      const QuadratureSpec& spec = {}) {
  if (!is_hurwitz(A).stable) throw std::invalid_argument("h2_quadrature: system not Hurwitz");
  double lo, hi;
  detail::pole_range(A, lo, hi);
  QuadratureResult res;
  if (!std::isfinite(lo)) return res;  // no dynamics
  const double u0 = std::log(lo) - spec.decades_below * std::log(10.0);
  const double u1 = std::log(hi) + spec.decades_above * std::log(10.0);
  const auto N = A.rows();
  const CMat Ac = A.cast<cplx>(), Bc = B.cast<cplx>(), Cc = C.cast<cplx>();
  auto f = [&](double w) {
    const CMat M = cplx(0, w) * CMat::Identity(N, N) - Ac;
    return detail::trace_gram(Cc * M.partialPivLu().solve(Bc));
  };
  auto g = [&](double u) {
    const double w = std::exp(u);
    return f(w) * w;
  };

  std::vector<double> cuts = {u0, u1};
  Eigen::EigenSolver<Mat> es(A, false);
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const double im = std::abs(es.eigenvalues()(i).imag()), re = std::abs(es.eigenvalues()(i).real());
    for (double w : {im, im - re, im + re, std::abs(es.eigenvalues()(i))})
      if (w > 0 && std::log(w) > u0 && std::log(w) < u1) cuts.push_back(std::log(w));
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double a, double b) { return b - a < 1e-12; }),
             cuts.end());

  struct Piece {
    double a, b, val, err;
    bool operator<(const Piece& o) const { return err < o.err; }
  };
  std::priority_queue<Piece> heap;
  double total = 0, err = 0;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    auto [v, e] = detail::gauss_kronrod15(g, cuts[i], cuts[i + 1]);
    heap.push({cuts[i], cuts[i + 1], v, e});
    total += v;
    err += e;
  }
  while (int(heap.size()) < spec.max_intervals && err > spec.rel_tol * std::abs(total)) {
    const Piece p = heap.top();
    heap.pop();
    const double m = 0.5 * (p.a + p.b);
    auto [v1, e1] = detail::gauss_kronrod15(g, p.a, m);
    auto [v2, e2] = detail::gauss_kronrod15(g, m, p.b);
    total += v1 + v2 - p.val;
    err += e1 + e2 - p.err;
    heap.push({p.a, m, v1, e1});
    heap.push({m, p.b, v2, e2});
  }
  // recompute sums from scratch so cancellation in the running totals does not linger
  total = err = 0;
  res.intervals = int(heap.size());
  while (!heap.empty()) {
    total += heap.top().val;
    err += heap.top().err;
    heap.pop();
  }
  res.converged = err <= spec.rel_tol * std::abs(total);
  const double tail = f(std::exp(u0)) * std::exp(u0) + f(std::exp(u1)) * std::exp(u1);
  res.squared = (total + tail) / std::numbers::pi;
  res.tail = tail / std::numbers::pi;
  res.error_est = err / std::numbers::pi;
  res.value = std::sqrt(std::max(0.0, res.squared));
  return res;
}

inline QuadratureResult h2_norm_quadrature(const QuantumLinearSystem& full,
                                           const QuantumLinearSystem& red,
                                           const QuadratureSpec& spec = {}) {
  const auto aug = build_augmented(full, red);
  return h2_quadrature(aug.A, aug.B, aug.C, spec);
}

// ---------------------------------------------------------------------------
// Frequency response tables

struct FrequencyGrid {
  double wmin = 1e-2, wmax = 1e2;
  int ppd = 100;

  std::vector<double> points() const {
    if (!(wmin > 0 && wmax > wmin && ppd > 0))
      throw std::invalid_argument("FrequencyGrid: need 0 < wmin < wmax and ppd > 0");
    const double decades = std::log10(wmax / wmin);
    const int n = std::max(1, int(std::ceil(decades * ppd)));
    std::vector<double> w(n + 1);
    for (int i = 0; i <= n; ++i) w[i] = wmin * std::pow(10.0, decades * i / n);
    return w;
  }
};

// Quadrature-level channel (0-based output row, input column).
struct Channel {
  int out = 0, in = 0;
};

// q-quadrature channel of field output k and field input j (0-based fields).
inline Channel field_channel(int k, int j, bool p_quadrature = false) {
  const int o = p_quadrature ? 1 : 0;
  return {2 * k + o, 2 * j + o};
}

struct ResponseTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& r : rows) {
      for (size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << '\n';
    }
    return os.str();
  }
};

inline ResponseTable freq_response_export(
    const std::vector<std::pair<std::string, QuantumLinearSystem>>& systems,
    const FrequencyGrid& grid, const std::vector<Channel>& channels) {
  ResponseTable t;
  t.header.push_back("omega");
  for (const auto& [name, s] : systems)
    for (const auto& ch : channels) {
      if (ch.out < 0 || ch.out >= 2 * s.l || ch.in < 0 || ch.in >= 2 * s.m)
        throw std::invalid_argument("freq_response_export: channel index out of range");
      const std::string tag = name + "_y" + std::to_string(ch.out + 1) + "u" + std::to_string(ch.in + 1);
      t.header.push_back(tag + "_mag_db");
      t.header.push_back(tag + "_phase_deg");
    }
  if (systems.empty()) return t;
  const auto w = grid.points();
  t.rows.assign(w.size(), std::vector<double>(t.header.size(), 0.0));
  for (size_t i = 0; i < w.size(); ++i) t.rows[i][0] = w[i];
  size_t col = 1;
  for (const auto& [name, s] : systems) {
    std::vector<CMat> samples;
    samples.reserve(w.size());
    for (double wi : w) samples.push_back(transfer_eval(s, cplx(0, wi)));
    for (const auto& ch : channels) {
      double prev = 0, offset = 0;
      for (size_t i = 0; i < w.size(); ++i) {
        const cplx v = samples[i](ch.out, ch.in);
        t.rows[i][col] = 20 * std::log10(std::abs(v));
        double ph = std::arg(v) * 180 / std::numbers::pi;
        if (i > 0) {
          while (ph + offset - prev > 180) offset -= 360;
          while (ph + offset - prev < -180) offset += 360;
        }
        prev = ph + offset;
        t.rows[i][col + 1] = prev;
      }
      col += 2;
    }
  }
  return t;
}

}  // namespace qlsr

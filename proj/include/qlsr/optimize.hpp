#pragma once

#include "qlsr/core.hpp"

#include <functional>
#include <limits>

namespace qlsr {

// f(x) and its gradient.  Returning +inf (or NaN) marks x as inadmissible,
// e.g. an unstable candidate; the line search then backtracks.
using ObjectiveFn = std::function<double(const Vec& x, Vec& grad)>;

struct BfgsOptions {
  int max_iter = 2000;
  double grad_tol = 1e-10;      // on ||g|| / max(1, |f|)
  double f_rel_tol = 1e-15;     // stop after `stall_window` iterations without this relative decrease
  int stall_window = 30;
  double armijo = 1e-4;
  int max_backtracks = 60;
};

struct BfgsResult {
  Vec x, grad;
  double f = 0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string stop_reason;
};

// Dense BFGS with Armijo backtracking.  The inverse Hessian is reset to a
// scaled identity whenever the search direction stops being a descent one.
inline BfgsResult minimize_bfgs(const ObjectiveFn& fn, const Vec& x0, const BfgsOptions& opt = {}) {
  BfgsResult res;
  const auto n = x0.size();
  Vec x = x0, g(n);
  double f = fn(x, g);
  res.evaluations = 1;
  if (!std::isfinite(f)) throw std::invalid_argument("minimize_bfgs: starting point inadmissible");
  auto reset = [&](const Vec& gr) { return Mat(Mat::Identity(n, n) / std::max(1.0, gr.norm())); };
  Mat H = reset(g);
  double best_window = f;
  int since_progress = 0;
  res.stop_reason = "max_iter";
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    if (g.norm() <= opt.grad_tol * std::max(1.0, std::abs(f))) {
      res.converged = true;
      res.stop_reason = "gradient";
      break;
    }
    Vec p = -H * g;
    if (g.dot(p) >= 0) {
      H = reset(g);
      p = -H * g;
    }
    double t = 1.0, fn_new = 0;
    Vec xn, gn(n);
    bool ok = false;
    for (int ls = 0; ls < opt.max_backtracks; ++ls) {
      xn = x + t * p;
      fn_new = fn(xn, gn);
      ++res.evaluations;
      if (std::isfinite(fn_new) && fn_new <= f + opt.armijo * t * g.dot(p)) {
        ok = true;
        break;
      }
      t *= 0.5;
    }
    if (!ok) {
      // one retry along steepest descent before giving up
      if ((H - reset(g)).norm() > 0) {
        H = reset(g);
        continue;
      }
      res.stop_reason = "line_search";
      break;
    }
    const Vec s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (it == 0) H = Mat::Identity(n, n) * (sy / y.squaredNorm());
      const double rho = 1.0 / sy;
      const Vec Hy = H * y;
      H += (rho * rho * y.dot(Hy) + rho) * s * s.transpose() - rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    x = xn;
    g = gn;
    f = fn_new;
    if (f < best_window - opt.f_rel_tol * std::abs(best_window)) {
      best_window = f;
      since_progress = 0;
    } else if (++since_progress >= opt.stall_window) {
      res.stop_reason = "stalled";
      res.converged = true;
      ++it;
      break;
    }
  }
  res.x = x;
  res.grad = g;
  res.f = f;
  res.iterations = it;
  return res;
}

}  // namespace qlsr

#pragma once

#include "qlsr/reduce.hpp"

namespace qlsr {

// ||T V - I||, ||T - V^T||
struct PassiveProjectionResiduals {
  double tv = 0, sym = 0;
};

inline PassiveProjectionResiduals passive_projection_residuals(const Mat& T, const Mat& V) {
  if (T.cols() != V.rows() || T.rows() != V.cols())
    throw std::invalid_argument("passive_projection_residuals: T and V are not conformable");
  return {(T * V - Mat::Identity(T.rows(), V.cols())).norm(), (T - V.transpose()).norm()};
}

inline void require_passive_stable(const QuantumLinearSystem& full, double tol_rel) {
  full.validate();
  if (full.l != full.m) throw std::invalid_argument("reduce_passive: input is not passive (l != m)");
  const double scale = system_scale(full);
  if (passive_residuals(full).max() > tol_rel * scale)
    throw std::invalid_argument("reduce_passive: input is not passive");
  if (!is_hurwitz(full.A, default_stability_margin(full.A)).stable)
    throw std::invalid_argument("reduce_passive: input system is not Hurwitz");
}

// Passive reduction: the commuting coupling replaces the symplectic one, and
// the reduced model keeps B_r = -C_r^T, D_r = I exactly.
inline ReductionResult reduce_passive(const QuantumLinearSystem& full, int r, Form form,
                                      const ReductionOptions& opt = {}) {
  full.validate();
  if (r < 1 || r >= full.n) throw std::invalid_argument("reduce_passive: need 1 <= r < n");
  require_passive_stable(full, opt.tol_real);
  return detail::run_pipeline(full, r, form, true, opt);
}

inline ReductionResult reduce_passive_qform(const QuantumLinearSystem& full, int r,
                                            const ReductionOptions& opt = {}) {
  return reduce_passive(full, r, Form::Q, opt);
}

inline ReductionResult reduce_passive_pform(const QuantumLinearSystem& full, int r,
                                            const ReductionOptions& opt = {}) {
  return reduce_passive(full, r, Form::P, opt);
}

}  // namespace qlsr

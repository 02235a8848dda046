#pragma once

#include "qlsr/core.hpp"

namespace qlsr {

// Optomechanical benchmark: cavity decay 2e5, mechanical damping 100,
// coupling 7.0711e4, mechanical frequency 1e4.  Reduced to 2 modes.
inline QuantumLinearSystem optomech_benchmark() { return example_optomech(2e5, 100, 7.0711e4, 1e4); }
inline constexpr double kOptomechTargetH2 = 528.36;  // H2 error, not squared

// Three cascaded cavities, detunings (10, 10, 0.01), unit decay rates.
inline QuantumLinearSystem cascade_benchmark() {
  Vec om(3), ka(3);
  om << 10, 10, 0.01;
  ka << 1, 1, 1;
  return example_cascade(om, ka);
}
inline constexpr double kCascadeTargetH2Squared = 1.02;  // squared H2 error

}  // namespace qlsr

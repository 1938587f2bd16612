#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flowpos/tape.hpp"

namespace flowpos {

// Builds a scalar output from leaf vars bound to `inputs`, in order.
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckItem {
  std::string name;
  std::vector<double> per_input_rel_err;  // norm-wise, one entry per input
  double max_rel_err = 0.0;
};

// Compares reverse-mode gradients against central finite differences of the
// same forward map. Relative error per input is norm-wise:
// ||g_ad - g_fd||_inf / max(||g_ad||_inf, ||g_fd||_inf, 1e-12).
GradCheckItem grad_check(const std::string& name, const TapeFn& f,
                         const std::vector<Tensor>& inputs, double eps = 1e-6);

// Battery over every primitive op on random inputs of several shapes.
std::vector<GradCheckItem> primitive_grad_report(std::uint64_t seed);

}  // namespace flowpos

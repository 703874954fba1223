#pragma once

#include <functional>
#include <string>
#include <vector>

#include "piyield/tensor.hpp"

namespace piyield {

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_param = 0;      // index into the params list
  std::size_t worst_component = 0;  // flat index within that tensor
  std::vector<std::string> notes;   // non-finite findings, by parameter index

  std::string summary() const;
};

// Central finite-difference check of reverse-mode gradients.
//
// build_loss must rebuild the full graph from the current parameter values
// and return a scalar loss; it is called once under a tape for the autodiff
// pass and twice per scalar parameter (no tape) for (f(p+eps)-f(p-eps))/2eps.
// Relative error uses the finite-difference value as reference:
//   |g_ad - g_fd| / max(denom_floor, |g_fd|)
// so a gradient planted at twice its true value reports an error near 1.
GradCheckReport grad_check(const std::function<Tensor()>& build_loss,
                           const std::vector<Tensor>& params, double eps, double tol,
                           double denom_floor = 1e-3);

}  // namespace piyield

#include "piyield/grad_check.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace piyield {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error
     << " max_abs_error=" << max_abs_error << " worst=param[" << worst_param << "]["
     << worst_component << "]";
  for (const auto& n : notes) os << "\n  " << n;
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& build_loss,
                           const std::vector<Tensor>& params, double eps, double tol,
                           double denom_floor) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

  GradCheckReport report;

  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
  std::vector<std::vector<double>> autodiff_grads;
  {
    Tape tape;
    Tensor loss = build_loss();
    tape.backward(loss);
  }
  for (const auto& p : params) {
    autodiff_grads.emplace_back(p.grad().begin(), p.grad().end());
  }

  // Finite differences run without a tape, so forwards stay pure.
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor param = params[pi];
    auto vals = param.mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double saved = vals[j];
      vals[j] = saved + eps;
      const double f_plus = build_loss().value();
      vals[j] = saved - eps;
      const double f_minus = build_loss().value();
      vals[j] = saved;

      const double g_fd = (f_plus - f_minus) / (2.0 * eps);
      const double g_ad = autodiff_grads[pi][j];
      if (!std::isfinite(g_fd) || !std::isfinite(g_ad)) {
        std::ostringstream os;
        os << "non-finite gradient at param[" << pi << "][" << j << "]: autodiff=" << g_ad
           << " finite-diff=" << g_fd;
        report.notes.push_back(os.str());
        continue;
      }
      const double abs_err = std::abs(g_ad - g_fd);
      const double rel_err = abs_err / std::max(denom_floor, std::abs(g_fd));
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst_param = pi;
        report.worst_component = j;
      }
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
    }
  }

  report.pass = report.notes.empty() && report.max_rel_error <= tol;
  return report;
}

}  // namespace piyield

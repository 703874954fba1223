#pragma once

#include <optional>
#include <string>
#include <vector>

#include "piyield/tensor.hpp"

namespace piyield {

struct LossWeights {
  double lambda_data = 1.0;     // weight on the squared-error fit term
  double lambda_physics = 1e-5;  // weight on the water-balance penalty
  void validate() const;        // both >= 0, not both zero
};

// Mean squared error; differentiable w.r.t. predictions.
Tensor data_loss(const Tensor& predicted, const Tensor& observed);

// Water-balance penalty. Per element:
//   eta < 0         -> eta^2            (lower-bound penalty)
//   eta > etx       -> (eta - etx)^2    (upper-bound penalty)
//   0 <= eta <= etx -> (eta - etx)^2    (pulls eta toward the requirement)
// averaged over every element. The branch indicators are constants during
// backward, so each element follows its branch's quadratic.
Tensor physics_loss(const Tensor& eta, const Tensor& etx);

// Per-step convenience: stacks the T step tensors side by side so the mean
// runs over batch and time jointly.
Tensor physics_loss(const std::vector<Tensor>& eta_steps, const std::vector<Tensor>& etx_steps);

Tensor total_loss(const Tensor& data, const Tensor& physics, const LossWeights& weights);

struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> r2;  // absent when the observed values have no variance
  std::size_t n = 0;
  std::string summary() const;
};

MetricsReport metrics(std::span<const double> predicted, std::span<const double> observed);

}  // namespace piyield

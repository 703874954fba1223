#include "piyield/loss.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace piyield {

void LossWeights::validate() const {
  if (lambda_data < 0.0 || lambda_physics < 0.0)
    throw std::invalid_argument("LossWeights: weights must be non-negative");
  if (lambda_data == 0.0 && lambda_physics == 0.0)
    throw std::invalid_argument("LossWeights: at least one weight must be positive");
}

Tensor data_loss(const Tensor& predicted, const Tensor& observed) {
  if (predicted.size() == 0) throw std::invalid_argument("data_loss: empty batch");
  if (predicted.shape() != observed.shape())
    throw std::invalid_argument("data_loss: shape mismatch " + shape_str(predicted.shape()) +
                                " vs " + shape_str(observed.shape()));
  return mean(square(subtract(predicted, observed)));
}

Tensor physics_loss(const Tensor& eta, const Tensor& etx) {
  if (eta.size() == 0) throw std::invalid_argument("physics_loss: empty batch");
  if (eta.shape() != etx.shape())
    throw std::invalid_argument("physics_loss: shape mismatch " + shape_str(eta.shape()) +
                                " vs " + shape_str(etx.shape()));
  for (double v : etx.values())
    if (!(v >= 0.0)) throw std::invalid_argument("physics_loss: etx must be non-negative");

  Tensor below = mask_lt(eta, 0.0);
  Tensor above = mask_gt(eta, etx);
  Tensor inside = mask_between(eta, 0.0, etx);
  Tensor overshoot = square(subtract(eta, etx));
  Tensor contribution =
      add(multiply(below, square(eta)), multiply(add(above, inside), overshoot));
  return mean(contribution);
}

Tensor physics_loss(const std::vector<Tensor>& eta_steps, const std::vector<Tensor>& etx_steps) {
  if (eta_steps.empty() || eta_steps.size() != etx_steps.size())
    throw std::invalid_argument("physics_loss: step counts disagree");
  return physics_loss(concat_cols(eta_steps), concat_cols(etx_steps));
}

Tensor total_loss(const Tensor& data, const Tensor& physics, const LossWeights& weights) {
  weights.validate();
  return add(scale(data, weights.lambda_data), scale(physics, weights.lambda_physics));
}

MetricsReport metrics(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size())
    throw std::invalid_argument("metrics: length mismatch");
  if (predicted.size() < 2) throw std::invalid_argument("metrics: need at least 2 samples");

  MetricsReport report;
  report.n = predicted.size();
  double abs_sum = 0.0, sq_sum = 0.0, obs_sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!std::isfinite(predicted[i]) || !std::isfinite(observed[i]))
      throw std::invalid_argument("metrics: non-finite value at index " + std::to_string(i));
    const double d = predicted[i] - observed[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
    obs_sum += observed[i];
  }
  const double n = static_cast<double>(report.n);
  report.mae = abs_sum / n;
  report.rmse = std::sqrt(sq_sum / n);

  const double obs_mean = obs_sum / n;
  double ss_tot = 0.0;
  for (double v : observed) ss_tot += (v - obs_mean) * (v - obs_mean);
  if (ss_tot > 0.0) report.r2 = 1.0 - sq_sum / ss_tot;
  return report;
}

std::string MetricsReport::summary() const {
  char buf[128];
  if (r2)
    std::snprintf(buf, sizeof(buf), "n=%zu mae=%.4f rmse=%.4f r2=%.4f", n, mae, rmse, *r2);
  else
    std::snprintf(buf, sizeof(buf), "n=%zu mae=%.4f rmse=%.4f r2=undefined", n, mae, rmse);
  return buf;
}

}  // namespace piyield

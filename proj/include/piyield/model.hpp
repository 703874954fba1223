#pragma once

// Sequence models over fused pixel time series. Input feature order per
// timestep is the 10 reflectance bands followed by window precipitation and
// mean temperature (see dataset.hpp).

#include <cstdint>
#include <vector>

#include "piyield/dataset.hpp"
#include "piyield/rng.hpp"
#include "piyield/tensor.hpp"

namespace piyield {

struct LinearParams {
  Tensor w;  // [in, out]
  Tensor b;  // [out], broadcast over the batch extent
  void init(std::size_t in, std::size_t out, SplitMix64& rng);
  std::vector<Tensor> parameters() const { return {w, b}; }
};

Tensor linear_forward(const LinearParams& p, const Tensor& x);

struct LstmParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Tensor w;  // [input, 4H], gate blocks ordered input, forget, cell, output
  Tensor u;  // [H, 4H]
  Tensor b;  // [4H]; forget block starts at +1 so early training retains state
  void init(std::size_t input, std::size_t hidden, SplitMix64& rng);
  std::vector<Tensor> parameters() const { return {w, u, b}; }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

LstmState lstm_step(const LstmParams& p, const Tensor& x_t, const LstmState& prev);

// Returns hidden state per timestep for a batch given as one [n, input] tensor
// per step.
std::vector<Tensor> lstm_forward(const LstmParams& p, const std::vector<Tensor>& inputs);

struct BatchNormParams {
  Tensor gamma;  // [F]
  Tensor beta;   // [F]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool stats_ready = false;
  double momentum = 0.1;
  double eps = 1e-5;
  void init(std::size_t features);
  std::vector<Tensor> parameters() const { return {gamma, beta}; }
};

// Training mode normalises with batch statistics and updates the running
// estimates in place; eval mode uses the running estimates and refuses to run
// before any training batch has populated them. The sequence form pools the
// statistics over every timestep of the unroll: normalising each step against
// its own batch moments would erase the seasonal level differences between
// steps, which are exactly what the downstream heads have to read. All steps
// must share the batch size and together supply at least 2 rows.
std::vector<Tensor> batchnorm_forward(BatchNormParams& p, const std::vector<Tensor>& xs,
                                      bool training);
Tensor batchnorm_forward(BatchNormParams& p, const Tensor& x, bool training);

struct SharedHeadParams {
  LinearParams fc;  // hidden -> width
  BatchNormParams bn;
  double dropout_rate = 0.1;
  std::size_t width = 128;
  void init(std::size_t hidden, std::size_t width_, SplitMix64& rng);
  std::vector<Tensor> parameters() const;
};

// Shared feature path for a whole unroll; batch-norm statistics are pooled
// across the steps. The single-step form is the T = 1 special case.
std::vector<Tensor> head_forward(SharedHeadParams& p, const std::vector<Tensor>& hs, bool training,
                                 SplitMix64& dropout_rng);
Tensor head_forward(SharedHeadParams& p, const Tensor& h, bool training, SplitMix64& dropout_rng);

struct Batch {
  std::size_t n = 0;
  std::vector<Tensor> inputs;  // per timestep, [n, kInputFeatures]
  std::vector<Tensor> etx;     // per timestep, [n, 1], crop water requirement (constant)
  Tensor targets;              // [n, 1]
  std::size_t timesteps() const { return inputs.size(); }
};

struct ModelOutput {
  std::vector<Tensor> eta;         // raw water-use head, per timestep [n, 1]
  std::vector<Tensor> ky;          // positive sensitivity head, per timestep [n, 1]
  std::vector<Tensor> yield_loss;  // composed anytime estimate, per timestep [n, 1]
};

// yl_t = clamp01( ky_t * (1 - sum_{i<=t} clip(eta_i, 0, etx_i) / sum_{i<=t} etx_i) ).
// Clipping happens only inside the composition; the raw eta_t is what the
// water-balance penalty sees.
std::vector<Tensor> compose_yield_loss(const std::vector<Tensor>& ky,
                                       const std::vector<Tensor>& eta,
                                       const std::vector<Tensor>& etx);

struct PiRnnParams {
  LstmParams lstm;
  SharedHeadParams head;
  LinearParams ky_out;   // width -> 1, softplus
  LinearParams eta_out;  // width -> 1, linear
  void init(std::size_t input, std::size_t hidden, std::size_t head_width, std::uint64_t seed);
  std::vector<Tensor> parameters() const;
};

ModelOutput pi_rnn_forward(PiRnnParams& p, const Batch& batch, bool training,
                           SplitMix64& dropout_rng);

struct BaselineRnnParams {
  LstmParams lstm;
  SharedHeadParams head;
  LinearParams out;  // width -> 1, sigmoid
  void init(std::size_t input, std::size_t hidden, std::size_t head_width, std::uint64_t seed);
  std::vector<Tensor> parameters() const;
};

// Direct regression of the final yield loss; per-timestep outputs allow the
// same anytime evaluation as the composed model.
std::vector<Tensor> baseline_rnn_forward(BaselineRnnParams& p, const Batch& batch, bool training,
                                         SplitMix64& dropout_rng);

// Water-balance-only baseline: applies the fixed-sensitivity yield response to
// the field-level simulated series, so every pixel of a field receives the
// same prediction and nothing is fitted.
double simulation_baseline_predict(const FieldSeries& field, double ky);

}  // namespace piyield

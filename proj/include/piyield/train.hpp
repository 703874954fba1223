#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "piyield/dataset.hpp"
#include "piyield/loss.hpp"
#include "piyield/model.hpp"

namespace piyield {

enum class OptimizerKind { Adam, Sgd };
enum class ModelKind { PiRnn, RnnBaseline, Simulation };
enum class Modality { Weather, Spectral, SpectralWeather };

std::string to_string(OptimizerKind k);
std::string to_string(ModelKind k);
std::string to_string(Modality m);
OptimizerKind parse_optimizer(const std::string& s);
ModelKind parse_model(const std::string& s);
Modality parse_modality(const std::string& s);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double learning_rate = 3e-3;
  // Decoupled decay; the sensitivity head carries an extra multiplier so the
  // composed prediction resolves its scale freedom toward small sensitivities
  // and large water-use estimates (see model_decay_scales in train.cpp).
  double weight_decay = 0.3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lambda_data = 1.0;
  // Enough to drain negative water-use outputs, small enough not to drag the
  // rest of the distribution onto the upper boundary it is centered on.
  double lambda_physics = 1e-5;
  int folds = 10;
  std::uint64_t seed = 0;
  Modality modality = Modality::SpectralWeather;
  ModelKind model = ModelKind::PiRnn;
  int hidden = 64;
  int head_width = 64;
  double dropout = 0.0;
  double val_fraction = 0.2;  // share of fields held out for the training log
  double sim_ky = 1.0;        // fixed sensitivity of the simulation baseline

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
};

// Flat key=value text, '#' comments. Unknown keys are rejected so typos fail
// loudly. Overrides (e.g. from command-line flags) use the same key names.
std::map<std::string, std::string> read_kv_file(const std::string& path);
void apply_kv(TrainConfig& config, const std::map<std::string, std::string>& kv);

// Per-channel standardization fitted on the training fold only. Modality
// selection zeroes the excluded channels before fitting, so they stay zero
// after scaling.
struct FeatureScaler {
  Modality modality = Modality::SpectralWeather;
  std::vector<double> mean;  // kInputFeatures
  std::vector<double> sd;    // kInputFeatures, degenerate channels pinned to 1
  void fit(const FieldDataset& dataset, std::span<const std::size_t> idx, Modality m);
  std::vector<double> transform(const PixelSample& sample) const;  // T x kInputFeatures
};

struct TrainedModel {
  ModelKind kind = ModelKind::PiRnn;
  Modality modality = Modality::SpectralWeather;
  std::size_t hidden = 64;
  std::size_t head_width = 64;
  double dropout = 0.0;
  double sim_ky = 1.0;
  PiRnnParams pi;
  BaselineRnnParams baseline;
  FeatureScaler scaler;
  std::string provenance;
};

struct EpochLog {
  int epoch = 0;
  double train_data = 0.0;
  double train_physics = 0.0;
  double train_total = 0.0;
  std::optional<double> val_data;
  std::optional<double> val_physics;
  std::optional<double> val_total;
};

struct TrainResult {
  std::vector<EpochLog> log;
  bool diverged = false;
  int completed_epochs = 0;
};

// Minimizes the weighted objective with mini-batch gradient descent. The
// validation split (by field, val_fraction) only feeds the log. On a
// non-finite loss the last end-of-epoch parameter state is restored and
// training stops early with diverged = true.
TrainResult train(const TrainConfig& config, const FieldDataset& dataset, TrainedModel& model);

// As train(), with caller-provided index sets (used by cross-validation).
TrainResult train_on_split(const TrainConfig& config, const FieldDataset& dataset,
                           std::span<const std::size_t> train_idx,
                           std::span<const std::size_t> val_idx, std::uint64_t seed,
                           TrainedModel& model);

// Assembles model-ready tensors (scaled inputs, raw etx, targets) for the
// given sample indices. All samples must share one observation calendar.
Batch make_batch(const FieldDataset& dataset, const FeatureScaler& scaler,
                 std::span<const std::size_t> idx);

// Per-timestep yield-loss predictions in eval mode, row-major [idx.size() x T].
std::vector<double> predict_trajectories(TrainedModel& model, const FieldDataset& dataset,
                                         std::span<const std::size_t> idx);

// Share of raw water-use outputs inside [0, etx] over the given pixels.
double fraction_eta_in_bounds(TrainedModel& model, const FieldDataset& dataset,
                              std::span<const std::size_t> idx);

struct FoldReport {
  int fold = 0;
  MetricsReport metrics;
  bool diverged = false;
};

struct EvalReport {
  std::string model_name;
  std::string modality_name;
  std::string provenance;
  int folds = 0;
  std::vector<FoldReport> per_fold;
  // Aggregates: mean/sd across folds plus metrics pooled over every held-out
  // pixel (each pixel is validated exactly once).
  double mae_mean = 0.0, mae_sd = 0.0;
  double rmse_mean = 0.0, rmse_sd = 0.0;
  std::optional<double> r2_mean, r2_sd;
  MetricsReport pooled;
  // Anytime accuracy: pooled R2 of the step-t estimate against the final
  // target, indexed by days before the last observation (descending).
  std::vector<int> horizon_days_before;
  std::vector<std::optional<double>> horizon_r2;
  // Fraction of held-out water-use estimates inside [0, requirement], pooled
  // across folds. Absent for models without the water-use head.
  std::optional<double> eta_in_bounds;
  TrainConfig config;
};

EvalReport cross_validate(const TrainConfig& config, const FieldDataset& dataset);

// ---- checkpoints -----------------------------------------------------------

// Versioned text container; values are hex floats so save/load round-trips
// bit-exactly.
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace piyield

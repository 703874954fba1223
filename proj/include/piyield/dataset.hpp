#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "piyield/fao56.hpp"

namespace piyield {

// One pixel's fused time series. All per-timestep vectors share length T;
// spectral is T x 10 row-major.
struct PixelSample {
  std::string field_id;
  std::string pixel_id;
  std::vector<int> days;  // days after sowing, strictly increasing
  std::vector<double> spectral;
  std::vector<double> precip_mm;
  std::vector<double> temp_c;
  std::vector<double> etx_mm;  // per-window ETx sums
  double target_yl = 0.0;

  std::size_t timesteps() const { return days.size(); }
  void validate() const;
};

inline constexpr int kSpectralBands = 10;
// precip, temperature, crop demand (ETx), demand change vs previous window
inline constexpr int kWeatherFeatures = 4;
inline constexpr int kInputFeatures = kSpectralBands + kWeatherFeatures;

// Ground truth attached by the generator; absent for ingested data.
struct PixelTruth {
  double ky = 0.0;
  double yl = 0.0;
  std::vector<double> ks_daily;
  std::vector<double> eta_daily;
  std::vector<double> etx_daily;
};

// Field-level ("regional") simulation aggregated to the observation windows.
struct FieldSeries {
  std::vector<int> days;
  std::vector<double> etx_mm;
  std::vector<double> eta_mm;
};

struct FieldDataset {
  std::vector<PixelSample> samples;
  std::string provenance;
  std::vector<PixelTruth> truth;              // parallel to samples when synthetic
  std::map<std::string, FieldSeries> field_sim;  // per field when synthetic

  std::vector<std::string> field_ids() const;  // distinct, sorted
  bool has_truth() const { return truth.size() == samples.size() && !samples.empty(); }
};

struct SynthConfig {
  int n_fields = 20;
  int pixels_per_field = 50;
  int season_length_days = 120;
  int observation_interval_days = 6;
  double ky_min = 0.6;
  double ky_max = 1.35;
  double noise_sd = 0.02;  // per spectral channel
  std::uint64_t seed = 42;
  // Drought scenario: field-level soil and rainfall regime ranges. The floor is
  // chosen so even the driest field keeps its season-end loss below the [0,1]
  // clamp; a saturated target carries no gradient and no yield signal.
  double taw_min = 60.0;
  double taw_max = 140.0;
  double rain_prob_min = 0.10;
  double rain_prob_max = 0.30;
  double rain_depth_min = 3.5;  // mm, mean event depth
  double rain_depth_max = 9.0;
  int drought_fields = -1;  // -1: every field draws a regime; else first N fields
                            // are drought-prone and the rest stay well watered
  double elevation_m = 500.0;

  void validate() const;
  std::string canonical_string() const;  // hashed into provenance
};

// Relative yield loss 1 - ya/yx_field; requires 0 <= ya <= yx_field.
double relative_yield_loss(double ya, double yx_field);

struct FusedWeather {
  std::vector<double> precip_mm;  // summed per window
  std::vector<double> temp_c;     // averaged per window
};

// Aggregates daily weather over half-open windows (t_{i-1}, t_i]; the first
// window starts at sowing. Observation days are 1-based days after sowing and
// must lie within the weather span.
FusedWeather early_fuse(std::span<const int> s2_days, std::span<const WeatherDaily> daily);

// Windowed sums of an arbitrary daily series over the same fusion windows.
std::vector<double> window_sums(std::span<const int> s2_days, std::span<const double> daily);

// Synthetic dataset with known ground truth. Same seed, same bytes.
FieldDataset synth_generate(const SynthConfig& config);

struct FoldSplit {
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::string> val_fields;
};

// Grouped K-fold over fields: every field's pixels land wholly in exactly one
// validation fold; fold field counts differ by at most one.
std::vector<FoldSplit> kfold_split(const FieldDataset& dataset, int k, std::uint64_t seed);

// Pixel-series CSV, one row per (pixel, timestep):
//   field_id,pixel_id,t_index,day,b01..b10,precip_mm,temp_c,etx_mm,target_yl
FieldDataset ingest_csv(const std::string& path);
void write_csv(const FieldDataset& dataset, const std::string& path);

// Field-level simulation sidecar: field_id,t_index,day,etx_mm,eta_mm
void write_field_sim_csv(const FieldDataset& dataset, const std::string& path);
void read_field_sim_csv(FieldDataset& dataset, const std::string& path);

}  // namespace piyield

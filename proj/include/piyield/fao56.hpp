#pragma once

#include <span>
#include <string>
#include <vector>

namespace piyield {

// One day of meteorological drivers. Units follow the FAO-56 conventions:
// temperatures in degC, humidity in percent, wind at 2 m in m/s, radiation
// terms in MJ m-2 day-1, precipitation in mm/day.
struct WeatherDaily {
  double t_mean = 0.0;
  double t_min = 0.0;
  double t_max = 0.0;
  double rh_mean = 0.0;
  double wind_2m = 0.0;
  double net_radiation = 0.0;
  double soil_heat_flux = 0.0;
  double precipitation = 0.0;

  void validate() const;  // throws on invariant violations
};

// Staged single crop coefficient: constant kc_initial, linear ramp to kc_mid
// across the development stage, constant kc_mid, linear ramp to kc_end
// across the late stage. Boundaries are days after sowing.
struct CropCoefficientCurve {
  double initial_end = 25.0;
  double development_end = 55.0;
  double mid_end = 90.0;
  double late_end = 120.0;
  double kc_initial = 0.3;
  double kc_mid = 1.15;
  double kc_end = 0.4;

  void validate() const;
  double season_length() const { return late_end; }
};

// Single-layer root-zone water store. Depletion is measured downward from
// field capacity, clamped to [0, total_available_water].
struct SoilBucket {
  double total_available_water = 100.0;  // mm
  double depletion_fraction = 0.5;       // p, readily available fraction
  double current_depletion = 0.0;        // mm

  void validate() const;
};

// Daily series of the simulated quantities; eta = ks * etx elementwise.
struct EtSeries {
  std::vector<double> et0;
  std::vector<double> etx;
  std::vector<double> ks;
  std::vector<double> eta;
};

// Saturation vapour pressure e0(T) [kPa] and the slope of its curve [kPa/degC].
double saturation_vapour_pressure(double t_c);
double svp_slope(double t_c);
// Psychrometric constant [kPa/degC] at the station elevation [m].
double psychrometric_constant(double elevation_m);

// FAO-56 Penman-Monteith reference evapotranspiration [mm/day], clamped at 0.
double reference_et0(const WeatherDaily& day, double elevation_m = 500.0);

// Piecewise-linear staged Kc. day_after_sowing must lie in [0, late_end].
double crop_kc(double day_after_sowing, const CropCoefficientCurve& curve);

// Default cereal-like staging (20/45/75/100 % of the season) with the stock
// Kc levels, for seasons of any length.
CropCoefficientCurve default_cereal_curve(double season_length_days);

// ETx(t) = Kc(t) * ET0(t) over the season.
std::vector<double> simulate_etx(std::span<const WeatherDaily> weather,
                                 const CropCoefficientCurve& curve, double elevation_m = 500.0);

struct StressSeries {
  std::vector<double> ks;
  std::vector<double> eta;
};

// Daily water balance: Ks from start-of-day depletion, ETa = Ks*ETx, then
// deplete by ETa and refill by precipitation (clamped to the bucket).
// Ks = 1 while depletion <= p*TAW, else (TAW - depletion)/((1-p)*TAW).
StressSeries soil_water_stress(std::span<const WeatherDaily> weather,
                               std::span<const double> etx, SoilBucket& bucket);

// Seasonal yield loss Yl = Ky * (1 - sum(ETa)/sum(ETx)), clamped to [0,1].
double true_yield_loss(std::span<const double> etx, std::span<const double> eta, double ky);

// Convenience wrapper running the full chain for one season.
EtSeries simulate_season(std::span<const WeatherDaily> weather, const CropCoefficientCurve& curve,
                         SoilBucket bucket, double elevation_m = 500.0);

// Weather CSV: header `day,t_mean,t_min,t_max,rh_mean,wind_2m,net_radiation,
// soil_heat_flux,precip_mm`, one row per day with day = 1..N contiguous.
// Violations are reported with line numbers.
std::vector<WeatherDaily> read_weather_csv(const std::string& path);

// Per-day simulation output: day,et0,etx,ks,eta.
void write_et_series_csv(const EtSeries& series, const std::string& path);

}  // namespace piyield

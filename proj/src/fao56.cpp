#include "piyield/fao56.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "piyield/io_util.hpp"

namespace piyield {

void WeatherDaily::validate() const {
  if (!(t_min <= t_mean && t_mean <= t_max))
    throw std::invalid_argument("WeatherDaily: need t_min <= t_mean <= t_max, got " +
                                std::to_string(t_min) + ", " + std::to_string(t_mean) + ", " +
                                std::to_string(t_max));
  if (rh_mean < 0.0 || rh_mean > 100.0)
    throw std::invalid_argument("WeatherDaily: rh_mean out of [0,100]: " + std::to_string(rh_mean));
  if (wind_2m < 0.0)
    throw std::invalid_argument("WeatherDaily: negative wind_2m: " + std::to_string(wind_2m));
  if (precipitation < 0.0)
    throw std::invalid_argument("WeatherDaily: negative precipitation: " +
                                std::to_string(precipitation));
}

void CropCoefficientCurve::validate() const {
  if (!(0.0 < initial_end && initial_end < development_end && development_end < mid_end &&
        mid_end < late_end))
    throw std::invalid_argument("CropCoefficientCurve: stage boundaries must be strictly increasing");
  if (kc_initial <= 0.0 || kc_mid <= 0.0 || kc_end <= 0.0)
    throw std::invalid_argument("CropCoefficientCurve: all kc must be positive");
}

void SoilBucket::validate() const {
  if (total_available_water <= 0.0)
    throw std::invalid_argument("SoilBucket: total_available_water must be positive");
  if (depletion_fraction <= 0.0 || depletion_fraction >= 1.0)
    throw std::invalid_argument("SoilBucket: depletion_fraction must lie in (0,1)");
  if (current_depletion < 0.0 || current_depletion > total_available_water)
    throw std::invalid_argument("SoilBucket: current_depletion outside [0, TAW]");
}

double saturation_vapour_pressure(double t_c) {
  return 0.6108 * std::exp(17.27 * t_c / (t_c + 237.3));
}

double svp_slope(double t_c) {
  const double denom = t_c + 237.3;
  return 4098.0 * saturation_vapour_pressure(t_c) / (denom * denom);
}

double psychrometric_constant(double elevation_m) {
  const double pressure = 101.3 * std::pow((293.0 - 0.0065 * elevation_m) / 293.0, 5.26);
  return 0.000665 * pressure;
}

double reference_et0(const WeatherDaily& day, double elevation_m) {
  day.validate();

  const double delta = svp_slope(day.t_mean);
  const double gamma = psychrometric_constant(elevation_m);
  const double es =
      0.5 * (saturation_vapour_pressure(day.t_max) + saturation_vapour_pressure(day.t_min));
  const double ea = day.rh_mean / 100.0 * es;

  const double radiation_term = 0.408 * delta * (day.net_radiation - day.soil_heat_flux);
  const double wind_term =
      gamma * (900.0 / (day.t_mean + 273.0)) * day.wind_2m * (es - ea);
  const double denom = delta + gamma * (1.0 + 0.34 * day.wind_2m);
  const double et0 = (radiation_term + wind_term) / denom;

  if (!std::isfinite(et0))
    throw std::domain_error("reference_et0: non-finite result for t_mean=" +
                            std::to_string(day.t_mean));
  return std::max(et0, 0.0);
}

double crop_kc(double day_after_sowing, const CropCoefficientCurve& curve) {
  curve.validate();
  if (day_after_sowing < 0.0 || day_after_sowing > curve.late_end)
    throw std::out_of_range("crop_kc: day " + std::to_string(day_after_sowing) +
                            " outside season [0," + std::to_string(curve.late_end) + "]");
  if (day_after_sowing <= curve.initial_end) return curve.kc_initial;
  if (day_after_sowing <= curve.development_end) {
    const double f =
        (day_after_sowing - curve.initial_end) / (curve.development_end - curve.initial_end);
    return curve.kc_initial + f * (curve.kc_mid - curve.kc_initial);
  }
  if (day_after_sowing <= curve.mid_end) return curve.kc_mid;
  const double f = (day_after_sowing - curve.mid_end) / (curve.late_end - curve.mid_end);
  return curve.kc_mid + f * (curve.kc_end - curve.kc_mid);
}

CropCoefficientCurve default_cereal_curve(double season_length_days) {
  if (!(season_length_days > 0.0))
    throw std::invalid_argument("default_cereal_curve: season length must be positive");
  CropCoefficientCurve curve;
  curve.initial_end = 0.20 * season_length_days;
  curve.development_end = 0.45 * season_length_days;
  curve.mid_end = 0.75 * season_length_days;
  curve.late_end = season_length_days;
  return curve;
}

std::vector<double> simulate_etx(std::span<const WeatherDaily> weather,
                                 const CropCoefficientCurve& curve, double elevation_m) {
  curve.validate();
  if (static_cast<double>(weather.size()) > curve.late_end)
    throw std::out_of_range("simulate_etx: weather series of " + std::to_string(weather.size()) +
                            " days exceeds season length " + std::to_string(curve.late_end));
  std::vector<double> etx(weather.size());
  for (std::size_t i = 0; i < weather.size(); ++i) {
    // day i covers day-after-sowing i+1
    etx[i] = crop_kc(static_cast<double>(i + 1), curve) * reference_et0(weather[i], elevation_m);
  }
  return etx;
}

StressSeries soil_water_stress(std::span<const WeatherDaily> weather,
                               std::span<const double> etx, SoilBucket& bucket) {
  bucket.validate();
  if (weather.size() != etx.size())
    throw std::invalid_argument("soil_water_stress: weather has " +
                                std::to_string(weather.size()) + " days but etx has " +
                                std::to_string(etx.size()));
  const double taw = bucket.total_available_water;
  const double raw_threshold = bucket.depletion_fraction * taw;  // readily available water
  const double stress_span = (1.0 - bucket.depletion_fraction) * taw;

  StressSeries out;
  out.ks.resize(etx.size());
  out.eta.resize(etx.size());
  for (std::size_t i = 0; i < etx.size(); ++i) {
    double ks = 1.0;
    if (bucket.current_depletion > raw_threshold)
      ks = std::clamp((taw - bucket.current_depletion) / stress_span, 0.0, 1.0);
    const double eta = ks * etx[i];
    out.ks[i] = ks;
    out.eta[i] = eta;
    bucket.current_depletion =
        std::clamp(bucket.current_depletion + eta - weather[i].precipitation, 0.0, taw);
  }
  return out;
}

double true_yield_loss(std::span<const double> etx, std::span<const double> eta, double ky) {
  if (ky <= 0.0) throw std::invalid_argument("true_yield_loss: ky must be positive");
  if (etx.size() != eta.size())
    throw std::invalid_argument("true_yield_loss: series length mismatch");
  double sum_etx = 0.0, sum_eta = 0.0;
  for (std::size_t i = 0; i < etx.size(); ++i) {
    sum_etx += etx[i];
    sum_eta += eta[i];
  }
  if (sum_etx <= 0.0) throw std::domain_error("true_yield_loss: seasonal ETx sum is zero");
  const double yl = ky * (1.0 - sum_eta / sum_etx);
  return std::clamp(yl, 0.0, 1.0);
}

EtSeries simulate_season(std::span<const WeatherDaily> weather, const CropCoefficientCurve& curve,
                         SoilBucket bucket, double elevation_m) {
  EtSeries series;
  series.et0.resize(weather.size());
  for (std::size_t i = 0; i < weather.size(); ++i)
    series.et0[i] = reference_et0(weather[i], elevation_m);
  series.etx = simulate_etx(weather, curve, elevation_m);
  StressSeries stress = soil_water_stress(weather, series.etx, bucket);
  series.ks = std::move(stress.ks);
  series.eta = std::move(stress.eta);
  return series;
}

namespace {

constexpr const char* kWeatherHeader =
    "day,t_mean,t_min,t_max,rh_mean,wind_2m,net_radiation,soil_heat_flux,precip_mm";

double weather_cell(const std::string& path, std::size_t line_no, std::string_view name,
                    std::string_view text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": cannot parse " +
                             std::string(name) + " value '" + std::string(text) + "'");
  return v;
}

}  // namespace

std::vector<WeatherDaily> read_weather_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_weather_csv: cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kWeatherHeader)
    throw std::runtime_error(path + ":1: unexpected header; expected '" +
                             std::string(kWeatherHeader) + "'");

  std::vector<WeatherDaily> weather;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 9)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 9 columns, got " +
                               std::to_string(cells.size()));
    const long day = static_cast<long>(weather_cell(path, line_no, "day", cells[0]));
    if (day != static_cast<long>(weather.size()) + 1)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected day " +
                               std::to_string(weather.size() + 1) + ", got " +
                               std::to_string(day));
    WeatherDaily w;
    w.t_mean = weather_cell(path, line_no, "t_mean", cells[1]);
    w.t_min = weather_cell(path, line_no, "t_min", cells[2]);
    w.t_max = weather_cell(path, line_no, "t_max", cells[3]);
    w.rh_mean = weather_cell(path, line_no, "rh_mean", cells[4]);
    w.wind_2m = weather_cell(path, line_no, "wind_2m", cells[5]);
    w.net_radiation = weather_cell(path, line_no, "net_radiation", cells[6]);
    w.soil_heat_flux = weather_cell(path, line_no, "soil_heat_flux", cells[7]);
    w.precipitation = weather_cell(path, line_no, "precip_mm", cells[8]);
    try {
      w.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    weather.push_back(w);
  }
  if (weather.empty()) throw std::runtime_error(path + ": no data rows");
  return weather;
}

void write_et_series_csv(const EtSeries& series, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_et_series_csv: cannot open " + path);
  out << "day,et0,etx,ks,eta\n";
  for (std::size_t i = 0; i < series.et0.size(); ++i)
    out << (i + 1) << ',' << format_double(series.et0[i]) << ',' << format_double(series.etx[i])
        << ',' << format_double(series.ks[i]) << ',' << format_double(series.eta[i]) << '\n';
}

}  // namespace piyield

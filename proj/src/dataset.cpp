#include "piyield/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "piyield/io_util.hpp"
#include "piyield/rng.hpp"

namespace piyield {

namespace {

constexpr const char* kCsvHeader =
    "field_id,pixel_id,t_index,day,b01,b02,b03,b04,b05,b06,b07,b08,b09,b10,"
    "precip_mm,temp_c,etx_mm,target_yl";

// Band responses to the vegetation latent: visible bands darken with vigour,
// NIR/red-edge brighten. Offsets keep every band inside [0,1].
constexpr std::array<double, kSpectralBands> kBandGain = {-0.25, -0.30, -0.35, 0.20, 0.30,
                                                          0.40,  0.45,  0.50,  -0.20, -0.15};
constexpr std::array<double, kSpectralBands> kBandOffset = {0.30, 0.35, 0.40, 0.15, 0.20,
                                                            0.25, 0.30, 0.35, 0.45, 0.40};

// Canopy development: logistic green-up, mild senescence near harvest.
double canopy_curve(double day, double season_length) {
  const double up = 1.0 / (1.0 + std::exp(-0.15 * (day - 0.25 * season_length)));
  const double down = 1.0 / (1.0 + std::exp(0.08 * (day - (season_length + 5.0))));
  return up * down;
}

std::vector<WeatherDaily> draw_field_weather(int season_length, bool drought, double rain_prob,
                                             double rain_mean_depth, SplitMix64& rng) {
  std::vector<WeatherDaily> weather(season_length);
  for (int d = 1; d <= season_length; ++d) {
    WeatherDaily w;
    const double s = std::sin(std::numbers::pi * d / season_length);
    bool rain_day = true;
    if (drought) {
      rain_day = rng.bernoulli(rain_prob);
      w.precipitation = rain_day ? -rain_mean_depth * std::log1p(-rng.uniform()) : 0.0;
    } else {
      w.precipitation = 10.0;  // well watered: refills the bucket every day
    }
    w.t_mean = 10.0 + 12.0 * s + rng.normal(0.0, 1.5);
    w.t_min = w.t_mean - (3.0 + std::abs(rng.normal(0.0, 1.0)));
    w.t_max = w.t_mean + (3.0 + std::abs(rng.normal(0.0, 1.0)));
    w.rh_mean = std::clamp(60.0 + (rain_day ? 8.0 : 0.0) + rng.normal(0.0, 8.0), 25.0, 95.0);
    w.wind_2m = std::clamp(2.0 + 0.8 * rng.normal(), 0.3, 6.0);
    w.net_radiation =
        std::max(1.0, (7.0 + 8.0 * s) * (rain_day ? 0.72 : 1.0) + rng.normal(0.0, 0.7));
    w.soil_heat_flux = 0.0;
    weather[static_cast<std::size_t>(d - 1)] = w;
  }
  return weather;
}

[[noreturn]] void csv_fail(const std::string& path, std::size_t line_no, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

double parse_double(const std::string& path, std::size_t line_no, std::string_view field,
                    std::string_view text) {
  double v = 0.0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    csv_fail(path, line_no, "cannot parse " + std::string(field) + " value '" + std::string(text) + "'");
  if (!std::isfinite(v))
    csv_fail(path, line_no, "non-finite " + std::string(field) + " value '" + std::string(text) + "'");
  return v;
}

long parse_long(const std::string& path, std::size_t line_no, std::string_view field,
                std::string_view text) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    csv_fail(path, line_no, "cannot parse " + std::string(field) + " value '" + std::string(text) + "'");
  return v;
}

}  // namespace

void PixelSample::validate() const {
  const std::size_t t = days.size();
  if (t < 2) throw std::invalid_argument("PixelSample " + field_id + "/" + pixel_id +
                                         ": needs at least 2 timesteps");
  if (spectral.size() != t * kSpectralBands || precip_mm.size() != t || temp_c.size() != t ||
      etx_mm.size() != t)
    throw std::invalid_argument("PixelSample " + field_id + "/" + pixel_id +
                                ": series lengths disagree");
  for (std::size_t i = 1; i < t; ++i)
    if (days[i] <= days[i - 1])
      throw std::invalid_argument("PixelSample " + field_id + "/" + pixel_id +
                                  ": timestamps not strictly increasing");
  for (double v : spectral)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("PixelSample " + field_id + "/" + pixel_id +
                                  ": reflectance outside [0,1]");
  for (double v : etx_mm)
    if (!(v >= 0.0))
      throw std::invalid_argument("PixelSample " + field_id + "/" + pixel_id + ": negative etx");
  if (!(target_yl >= 0.0 && target_yl <= 1.0))
    throw std::invalid_argument("PixelSample " + field_id + "/" + pixel_id +
                                ": target_yl outside [0,1]");
}

std::vector<std::string> FieldDataset::field_ids() const {
  std::set<std::string> ids;
  for (const auto& s : samples) ids.insert(s.field_id);
  return {ids.begin(), ids.end()};
}

void SynthConfig::validate() const {
  if (n_fields < 1 || pixels_per_field < 1 || season_length_days < 2 ||
      observation_interval_days < 1)
    throw std::invalid_argument("SynthConfig: all counts must be >= 1");
  if (season_length_days / observation_interval_days < 2)
    throw std::invalid_argument("SynthConfig: fewer than 2 observations per season");
  if (!(ky_min > 0.0 && ky_min <= ky_max))
    throw std::invalid_argument("SynthConfig: need 0 < ky_min <= ky_max");
  if (noise_sd < 0.0) throw std::invalid_argument("SynthConfig: noise_sd must be >= 0");
  if (!(taw_min > 0.0 && taw_min <= taw_max))
    throw std::invalid_argument("SynthConfig: need 0 < taw_min <= taw_max");
  if (!(rain_prob_min >= 0.0 && rain_prob_min <= rain_prob_max && rain_prob_max <= 1.0))
    throw std::invalid_argument("SynthConfig: rain probabilities must satisfy 0<=min<=max<=1");
  if (!(rain_depth_min >= 0.0 && rain_depth_min <= rain_depth_max))
    throw std::invalid_argument("SynthConfig: rain depths must satisfy 0<=min<=max");
  if (drought_fields > n_fields)
    throw std::invalid_argument("SynthConfig: drought_fields exceeds n_fields");
}

std::string SynthConfig::canonical_string() const {
  std::ostringstream os;
  os << "n_fields=" << n_fields << ";pixels_per_field=" << pixels_per_field
     << ";season_length_days=" << season_length_days
     << ";observation_interval_days=" << observation_interval_days << ";ky_min=" << ky_min
     << ";ky_max=" << ky_max << ";noise_sd=" << noise_sd << ";seed=" << seed
     << ";taw_min=" << taw_min << ";taw_max=" << taw_max << ";rain_prob_min=" << rain_prob_min
     << ";rain_prob_max=" << rain_prob_max << ";rain_depth_min=" << rain_depth_min
     << ";rain_depth_max=" << rain_depth_max << ";drought_fields=" << drought_fields
     << ";elevation_m=" << elevation_m;
  return os.str();
}

double relative_yield_loss(double ya, double yx_field) {
  if (yx_field <= 0.0)
    throw std::invalid_argument("relative_yield_loss: yield potential must be positive");
  if (ya < 0.0)
    throw std::invalid_argument("relative_yield_loss: negative actual yield");
  if (ya > yx_field)
    throw std::invalid_argument("relative_yield_loss: actual yield " + std::to_string(ya) +
                                " exceeds potential " + std::to_string(yx_field));
  return 1.0 - ya / yx_field;
}

FusedWeather early_fuse(std::span<const int> s2_days, std::span<const WeatherDaily> daily) {
  FusedWeather fused;
  int prev = 0;
  for (std::size_t i = 0; i < s2_days.size(); ++i) {
    const int day = s2_days[i];
    if (day <= prev)
      throw std::invalid_argument("early_fuse: observation days not strictly increasing");
    if (day > static_cast<int>(daily.size()))
      throw std::out_of_range("early_fuse: observation day " + std::to_string(day) +
                              " outside weather span of " + std::to_string(daily.size()) +
                              " days");
    double precip = 0.0, temp = 0.0;
    for (int d = prev + 1; d <= day; ++d) {
      precip += daily[static_cast<std::size_t>(d - 1)].precipitation;
      temp += daily[static_cast<std::size_t>(d - 1)].t_mean;
    }
    fused.precip_mm.push_back(precip);
    fused.temp_c.push_back(temp / (day - prev));
    prev = day;
  }
  return fused;
}

std::vector<double> window_sums(std::span<const int> s2_days, std::span<const double> daily) {
  std::vector<double> out;
  int prev = 0;
  for (std::size_t i = 0; i < s2_days.size(); ++i) {
    const int day = s2_days[i];
    if (day <= prev) throw std::invalid_argument("window_sums: days not strictly increasing");
    if (day > static_cast<int>(daily.size()))
      throw std::out_of_range("window_sums: day " + std::to_string(day) + " outside series");
    double acc = 0.0;
    for (int d = prev + 1; d <= day; ++d) acc += daily[static_cast<std::size_t>(d - 1)];
    out.push_back(acc);
    prev = day;
  }
  return out;
}

FieldDataset synth_generate(const SynthConfig& config) {
  config.validate();
  const CropCoefficientCurve curve = default_cereal_curve(config.season_length_days);

  std::vector<int> obs_days;
  for (int d = config.observation_interval_days; d <= config.season_length_days;
       d += config.observation_interval_days)
    obs_days.push_back(d);

  FieldDataset dataset;
  dataset.provenance = "synth:" + hex64(fnv1a(config.canonical_string().data(),
                                              config.canonical_string().size()));

  for (int f = 0; f < config.n_fields; ++f) {
    SplitMix64 field_rng(mix_seed(config.seed, 1, static_cast<std::uint64_t>(f)));
    const bool drought = config.drought_fields < 0 || f < config.drought_fields;
    const double rain_prob = field_rng.uniform(config.rain_prob_min, config.rain_prob_max);
    const double rain_depth = field_rng.uniform(config.rain_depth_min, config.rain_depth_max);
    const double field_taw = field_rng.uniform(config.taw_min, config.taw_max);

    const std::vector<WeatherDaily> weather =
        draw_field_weather(config.season_length_days, drought, rain_prob, rain_depth, field_rng);
    const std::vector<double> etx_daily = simulate_etx(weather, curve, config.elevation_m);
    const FusedWeather fused = early_fuse(obs_days, weather);
    const std::vector<double> etx_windows = window_sums(obs_days, etx_daily);

    char fid[16];
    std::snprintf(fid, sizeof(fid), "f%03d", f);

    // Field-level (regional) simulation with the nominal bucket; this is what
    // the simulation baseline is allowed to see.
    {
      SoilBucket nominal{field_taw, 0.5, 0.0};
      StressSeries field_stress = soil_water_stress(weather, etx_daily, nominal);
      FieldSeries fs;
      fs.days = obs_days;
      fs.etx_mm = etx_windows;
      fs.eta_mm = window_sums(obs_days, field_stress.eta);
      dataset.field_sim.emplace(fid, std::move(fs));
    }

    for (int p = 0; p < config.pixels_per_field; ++p) {
      SplitMix64 pix_rng(
          mix_seed(config.seed, 2 + static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(p)));
      const double taw_pixel = std::clamp(field_taw * pix_rng.uniform(0.7, 1.3), 20.0, 400.0);
      const double ky_pixel = pix_rng.uniform(config.ky_min, config.ky_max);

      SoilBucket bucket{taw_pixel, 0.5, 0.0};
      StressSeries stress = soil_water_stress(weather, etx_daily, bucket);
      const double target = true_yield_loss(etx_daily, stress.eta, ky_pixel);

      PixelSample sample;
      sample.field_id = fid;
      char pid[16];
      std::snprintf(pid, sizeof(pid), "p%04d", p);
      sample.pixel_id = pid;
      sample.days = obs_days;
      sample.precip_mm = fused.precip_mm;
      sample.temp_c = fused.temp_c;
      sample.etx_mm = etx_windows;
      sample.target_yl = target;

      // Spectral bands follow a vegetation latent that declines with the
      // ky-weighted cumulative ET deficit up to each observation.
      sample.spectral.resize(obs_days.size() * kSpectralBands);
      double cum_eta = 0.0, cum_etx = 0.0;
      std::size_t day_cursor = 0;
      for (std::size_t t = 0; t < obs_days.size(); ++t) {
        while (day_cursor < etx_daily.size() &&
               static_cast<int>(day_cursor) < obs_days[t]) {
          cum_eta += stress.eta[day_cursor];
          cum_etx += etx_daily[day_cursor];
          ++day_cursor;
        }
        const double deficit = cum_etx > 0.0 ? 1.0 - cum_eta / cum_etx : 0.0;
        const double latent = canopy_curve(obs_days[t], config.season_length_days) *
                              (1.0 - 0.7 * std::min(ky_pixel * deficit, 1.0));
        for (int b = 0; b < kSpectralBands; ++b) {
          double v = kBandOffset[static_cast<std::size_t>(b)] +
                     kBandGain[static_cast<std::size_t>(b)] * latent;
          if (config.noise_sd > 0.0) v += pix_rng.normal(0.0, config.noise_sd);
          sample.spectral[t * kSpectralBands + static_cast<std::size_t>(b)] =
              std::clamp(v, 0.0, 1.0);
        }
      }
      sample.validate();
      dataset.samples.push_back(std::move(sample));

      PixelTruth truth;
      truth.ky = ky_pixel;
      truth.yl = target;
      truth.ks_daily = std::move(stress.ks);
      truth.eta_daily = std::move(stress.eta);
      truth.etx_daily = etx_daily;
      dataset.truth.push_back(std::move(truth));
    }
  }
  return dataset;
}

std::vector<FoldSplit> kfold_split(const FieldDataset& dataset, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: K must be >= 2");
  const std::vector<std::string> fields = dataset.field_ids();
  if (static_cast<int>(fields.size()) < k)
    throw std::invalid_argument("kfold_split: " + std::to_string(fields.size()) +
                                " distinct fields but K=" + std::to_string(k));

  SplitMix64 rng(mix_seed(seed, 0xf01d));
  const std::vector<std::size_t> order = shuffled_indices(fields.size(), rng);

  std::map<std::string, int> fold_of_field;
  for (std::size_t i = 0; i < order.size(); ++i)
    fold_of_field[fields[order[i]]] = static_cast<int>(i % static_cast<std::size_t>(k));

  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (auto& [field, fold] : fold_of_field) folds[static_cast<std::size_t>(fold)].val_fields.push_back(field);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const int fold = fold_of_field.at(dataset.samples[i].field_id);
    for (int f = 0; f < k; ++f) {
      if (f == fold)
        folds[static_cast<std::size_t>(f)].val_idx.push_back(i);
      else
        folds[static_cast<std::size_t>(f)].train_idx.push_back(i);
    }
  }
  return folds;
}

void write_csv(const FieldDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  out << kCsvHeader << '\n';
  for (const auto& s : dataset.samples) {
    for (std::size_t t = 0; t < s.timesteps(); ++t) {
      out << s.field_id << ',' << s.pixel_id << ',' << t << ',' << s.days[t];
      for (int b = 0; b < kSpectralBands; ++b)
        out << ',' << format_double(s.spectral[t * kSpectralBands + static_cast<std::size_t>(b)]);
      out << ',' << format_double(s.precip_mm[t]) << ',' << format_double(s.temp_c[t]) << ','
          << format_double(s.etx_mm[t]) << ',' << format_double(s.target_yl) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

FieldDataset ingest_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ingest_csv: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  FieldDataset dataset;
  dataset.provenance = "csv:" + hex64(fnv1a(content.data(), content.size()));

  std::istringstream lines(content);
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(lines, line)) throw std::runtime_error(path + ": empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader)
    csv_fail(path, line_no, "unexpected header; expected '" + std::string(kCsvHeader) + "'");

  PixelSample current;
  bool have_current = false;
  auto flush = [&]() {
    if (!have_current) return;
    try {
      current.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": " + e.what());
    }
    dataset.samples.push_back(std::move(current));
    current = PixelSample{};
    have_current = false;
  };

  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 18)
      csv_fail(path, line_no,
               "expected 18 columns, got " + std::to_string(cells.size()));

    const std::string field_id(cells[0]);
    const std::string pixel_id(cells[1]);
    const long t_index = parse_long(path, line_no, "t_index", cells[2]);
    const long day = parse_long(path, line_no, "day", cells[3]);

    if (!have_current || field_id != current.field_id || pixel_id != current.pixel_id) {
      flush();
      // rows of one pixel must be contiguous and start at t_index 0
      if (t_index != 0)
        csv_fail(path, line_no, "pixel " + field_id + "/" + pixel_id +
                                    " does not start at t_index 0 (rows must be contiguous)");
      current.field_id = field_id;
      current.pixel_id = pixel_id;
      have_current = true;
    } else if (t_index != static_cast<long>(current.timesteps())) {
      csv_fail(path, line_no, "t_index " + std::to_string(t_index) + " out of order (expected " +
                                  std::to_string(current.timesteps()) + ")");
    }

    if (!current.days.empty() && day <= current.days.back())
      csv_fail(path, line_no, "day " + std::to_string(day) + " not strictly increasing");
    current.days.push_back(static_cast<int>(day));

    for (int b = 0; b < kSpectralBands; ++b) {
      char col[8];
      std::snprintf(col, sizeof(col), "b%02d", b + 1);
      const double v = parse_double(path, line_no, col, cells[static_cast<std::size_t>(4 + b)]);
      if (!(v >= 0.0 && v <= 1.0))
        csv_fail(path, line_no,
                 std::string("reflectance ") + col + "=" + format_double(v) + " outside [0,1]");
      current.spectral.push_back(v);
    }
    current.precip_mm.push_back(parse_double(path, line_no, "precip_mm", cells[14]));
    current.temp_c.push_back(parse_double(path, line_no, "temp_c", cells[15]));
    const double etx = parse_double(path, line_no, "etx_mm", cells[16]);
    if (etx < 0.0) csv_fail(path, line_no, "negative etx_mm");
    current.etx_mm.push_back(etx);

    const double target = parse_double(path, line_no, "target_yl", cells[17]);
    if (!(target >= 0.0 && target <= 1.0))
      csv_fail(path, line_no, "target_yl " + format_double(target) + " outside [0,1]");
    if (current.timesteps() > 1 && target != current.target_yl)
      csv_fail(path, line_no, "target_yl differs across rows of one pixel");
    current.target_yl = target;
  }
  flush();
  if (dataset.samples.empty()) throw std::runtime_error(path + ": no data rows");
  return dataset;
}

void write_field_sim_csv(const FieldDataset& dataset, const std::string& path) {
  if (dataset.field_sim.empty())
    throw std::runtime_error("write_field_sim_csv: dataset carries no field-level simulation");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_field_sim_csv: cannot open " + path);
  out << "field_id,t_index,day,etx_mm,eta_mm\n";
  for (const auto& [field, series] : dataset.field_sim) {
    for (std::size_t t = 0; t < series.days.size(); ++t)
      out << field << ',' << t << ',' << series.days[t] << ',' << format_double(series.etx_mm[t])
          << ',' << format_double(series.eta_mm[t]) << '\n';
  }
}

void read_field_sim_csv(FieldDataset& dataset, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_field_sim_csv: cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "field_id,t_index,day,etx_mm,eta_mm")
    csv_fail(path, line_no, "unexpected header");
  dataset.field_sim.clear();
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 5) csv_fail(path, line_no, "expected 5 columns");
    FieldSeries& series = dataset.field_sim[std::string(cells[0])];
    const long t_index = parse_long(path, line_no, "t_index", cells[1]);
    if (t_index != static_cast<long>(series.days.size()))
      csv_fail(path, line_no, "t_index out of order");
    series.days.push_back(static_cast<int>(parse_long(path, line_no, "day", cells[2])));
    series.etx_mm.push_back(parse_double(path, line_no, "etx_mm", cells[3]));
    series.eta_mm.push_back(parse_double(path, line_no, "eta_mm", cells[4]));
  }
}

}  // namespace piyield

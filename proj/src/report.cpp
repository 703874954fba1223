#include "piyield/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "piyield/io_util.hpp"
#include "piyield/rng.hpp"

namespace piyield {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json optional_number(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

ordered_json config_json(const TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["optimizer"] = to_string(c.optimizer);
  j["lambda_data"] = c.lambda_data;
  j["lambda_physics"] = c.lambda_physics;
  j["folds"] = c.folds;
  j["seed"] = c.seed;
  j["modality"] = to_string(c.modality);
  j["model"] = to_string(c.model);
  j["hidden"] = c.hidden;
  j["head_width"] = c.head_width;
  j["dropout"] = c.dropout;
  j["val_fraction"] = c.val_fraction;
  j["sim_ky"] = c.sim_ky;
  return j;
}

TrainConfig config_from_json(const ordered_json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.lambda_data = j.at("lambda_data").get<double>();
  c.lambda_physics = j.at("lambda_physics").get<double>();
  c.folds = j.at("folds").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.modality = parse_modality(j.at("modality").get<std::string>());
  c.model = parse_model(j.at("model").get<std::string>());
  c.hidden = j.at("hidden").get<int>();
  c.head_width = j.at("head_width").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.sim_ky = j.at("sim_ky").get<double>();
  return c;
}

ordered_json metrics_json(const MetricsReport& m) {
  ordered_json j;
  j["n"] = m.n;
  j["mae"] = m.mae;
  j["rmse"] = m.rmse;
  j["r2"] = optional_number(m.r2);
  return j;
}

MetricsReport metrics_from_json(const ordered_json& j) {
  MetricsReport m;
  m.n = j.at("n").get<std::size_t>();
  m.mae = j.at("mae").get<double>();
  m.rmse = j.at("rmse").get<double>();
  if (!j.at("r2").is_null()) m.r2 = j.at("r2").get<double>();
  return m;
}

}  // namespace

std::string report_json(const EvalReport& report) {
  ordered_json j;
  j["model"] = report.model_name;
  j["modality"] = report.modality_name;
  j["provenance"] = report.provenance;
  j["folds"] = report.folds;
  j["config"] = config_json(report.config);

  ordered_json folds = ordered_json::array();
  for (const auto& fr : report.per_fold) {
    ordered_json f;
    f["fold"] = fr.fold;
    f["diverged"] = fr.diverged;
    f["metrics"] = metrics_json(fr.metrics);
    folds.push_back(std::move(f));
  }
  j["per_fold"] = std::move(folds);

  ordered_json agg;
  agg["mae_mean"] = report.mae_mean;
  agg["mae_sd"] = report.mae_sd;
  agg["rmse_mean"] = report.rmse_mean;
  agg["rmse_sd"] = report.rmse_sd;
  agg["r2_mean"] = optional_number(report.r2_mean);
  agg["r2_sd"] = optional_number(report.r2_sd);
  agg["pooled"] = metrics_json(report.pooled);
  agg["eta_in_bounds"] = optional_number(report.eta_in_bounds);
  j["aggregate"] = std::move(agg);

  ordered_json horizon = ordered_json::array();
  for (std::size_t t = 0; t < report.horizon_days_before.size(); ++t) {
    ordered_json h;
    h["days_before"] = report.horizon_days_before[t];
    h["r2"] = optional_number(report.horizon_r2[t]);
    horizon.push_back(std::move(h));
  }
  j["horizon"] = std::move(horizon);
  return j.dump(2) + "\n";
}

void write_report_json(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_report_json: cannot open " + path);
  out << report_json(report);
  if (!out) throw std::runtime_error("write_report_json: write failed for " + path);
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_report_json: cannot open " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  EvalReport report;
  report.model_name = j.at("model").get<std::string>();
  report.modality_name = j.at("modality").get<std::string>();
  report.provenance = j.at("provenance").get<std::string>();
  report.folds = j.at("folds").get<int>();
  report.config = config_from_json(j.at("config"));
  for (const auto& f : j.at("per_fold")) {
    FoldReport fr;
    fr.fold = f.at("fold").get<int>();
    fr.diverged = f.at("diverged").get<bool>();
    fr.metrics = metrics_from_json(f.at("metrics"));
    report.per_fold.push_back(fr);
  }
  const auto& agg = j.at("aggregate");
  report.mae_mean = agg.at("mae_mean").get<double>();
  report.mae_sd = agg.at("mae_sd").get<double>();
  report.rmse_mean = agg.at("rmse_mean").get<double>();
  report.rmse_sd = agg.at("rmse_sd").get<double>();
  if (!agg.at("r2_mean").is_null()) report.r2_mean = agg.at("r2_mean").get<double>();
  if (!agg.at("r2_sd").is_null()) report.r2_sd = agg.at("r2_sd").get<double>();
  report.pooled = metrics_from_json(agg.at("pooled"));
  if (!agg.at("eta_in_bounds").is_null())
    report.eta_in_bounds = agg.at("eta_in_bounds").get<double>();
  for (const auto& h : j.at("horizon")) {
    report.horizon_days_before.push_back(h.at("days_before").get<int>());
    if (h.at("r2").is_null())
      report.horizon_r2.push_back(std::nullopt);
    else
      report.horizon_r2.push_back(h.at("r2").get<double>());
  }
  return report;
}

void write_metrics_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << "model,modality,fold,n,mae,rmse,r2\n";
  auto r2_cell = [](const std::optional<double>& v) { return v ? format_double(*v) : ""; };
  for (const auto& fr : report.per_fold)
    out << report.model_name << ',' << report.modality_name << ',' << fr.fold << ','
        << fr.metrics.n << ',' << format_double(fr.metrics.mae) << ','
        << format_double(fr.metrics.rmse) << ',' << r2_cell(fr.metrics.r2) << '\n';
  out << report.model_name << ',' << report.modality_name << ",pooled," << report.pooled.n << ','
      << format_double(report.pooled.mae) << ',' << format_double(report.pooled.rmse) << ','
      << r2_cell(report.pooled.r2) << '\n';
}

ComparisonTable report_tables(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("report_tables: no reports");
  for (const auto& r : reports)
    if (r.provenance != reports.front().provenance)
      throw std::invalid_argument("report_tables: dataset provenance mismatch ('" +
                                  reports.front().provenance + "' vs '" + r.provenance + "')");

  auto model_rank = [](const std::string& m) {
    if (m == "pi-rnn") return 0;
    if (m == "rnn-baseline") return 1;
    if (m == "simulation") return 2;
    return 3;
  };
  auto modality_rank = [](const std::string& m) {
    if (m == "weather") return 0;
    if (m == "spectral") return 1;
    if (m == "spectral+weather") return 2;
    return 3;
  };
  std::vector<const EvalReport*> ordered;
  for (const auto& r : reports) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [&](const EvalReport* a, const EvalReport* b) {
                     const int ma = model_rank(a->model_name), mb = model_rank(b->model_name);
                     if (ma != mb) return ma < mb;
                     return modality_rank(a->modality_name) < modality_rank(b->modality_name);
                   });

  // weather-only R2 per model, for the ablation delta
  std::map<std::string, double> weather_r2;
  for (const auto* r : ordered)
    if (r->modality_name == "weather" && r->pooled.r2) weather_r2[r->model_name] = *r->pooled.r2;

  std::string human = "model         modality           MAE    RMSE   R2      dR2_vs_weather\n";
  std::string csv = "model,modality,n,mae,rmse,r2,r2_delta_vs_weather\n";
  char line[160];
  for (const auto* r : ordered) {
    std::string r2_txt = "--", delta_txt = "";
    std::string r2_csv, delta_csv;
    if (r->pooled.r2) {
      std::snprintf(line, sizeof(line), "%.2f", *r->pooled.r2);
      r2_txt = line;
      r2_csv = format_double(*r->pooled.r2);
      const auto base = weather_r2.find(r->model_name);
      if (r->modality_name == "spectral+weather" && base != weather_r2.end()) {
        std::snprintf(line, sizeof(line), "%+.2f", *r->pooled.r2 - base->second);
        delta_txt = line;
        delta_csv = format_double(*r->pooled.r2 - base->second);
      }
    }
    std::snprintf(line, sizeof(line), "%-13s %-18s %-6.2f %-6.2f %-7s %s\n",
                  r->model_name.c_str(), r->modality_name.c_str(), r->pooled.mae, r->pooled.rmse,
                  r2_txt.c_str(), delta_txt.c_str());
    human += line;
    csv += r->model_name + ',' + r->modality_name + ',' + std::to_string(r->pooled.n) + ',' +
           format_double(r->pooled.mae) + ',' + format_double(r->pooled.rmse) + ',' + r2_csv +
           ',' + delta_csv + '\n';
  }
  return {human, csv};
}

void write_training_log_csv(const TrainResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_training_log_csv: cannot open " + path);
  out << "epoch,train_data_loss,train_physics_loss,train_total_loss,"
         "val_data_loss,val_physics_loss,val_total_loss\n";
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : ""; };
  for (const auto& e : result.log)
    out << e.epoch << ',' << format_double(e.train_data) << ',' << format_double(e.train_physics)
        << ',' << format_double(e.train_total) << ',' << cell(e.val_data) << ','
        << cell(e.val_physics) << ',' << cell(e.val_total) << '\n';
}

void emit_trajectories(TrainedModel& model, const FieldDataset& dataset, const std::string& path) {
  if (model.kind != ModelKind::PiRnn)
    throw std::invalid_argument("emit_trajectories: requires a pi-rnn checkpoint");
  // Scoring held-out data is the normal use, so a fingerprint mismatch is only
  // worth a note in case someone fed the wrong file by accident.
  if (model.provenance != dataset.provenance)
    std::cerr << "note: checkpoint was trained on '" << model.provenance << "', scoring '"
              << dataset.provenance << "'\n";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_trajectories: cannot open " + path);
  out << "field_id,pixel_id,t_index,day,ky,eta_mm,etx_mm,yl\n";

  SplitMix64 unused(0);
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  std::size_t done = 0;
  while (done < dataset.samples.size()) {
    const std::size_t n = std::min(kChunk, dataset.samples.size() - done);
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = done + i;
    Batch batch = make_batch(dataset, model.scaler, idx);
    ModelOutput pred = pi_rnn_forward(model.pi, batch, false, unused);
    for (std::size_t r = 0; r < n; ++r) {
      const PixelSample& s = dataset.samples[done + r];
      for (std::size_t t = 0; t < s.timesteps(); ++t)
        out << s.field_id << ',' << s.pixel_id << ',' << t << ',' << s.days[t] << ','
            << format_double(pred.ky[t].at(r)) << ',' << format_double(pred.eta[t].at(r)) << ','
            << format_double(s.etx_mm[t]) << ',' << format_double(pred.yield_loss[t].at(r))
            << '\n';
    }
    done += n;
  }
}

}  // namespace piyield

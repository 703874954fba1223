// Command-line front end: synthetic data generation, water-balance
// simulation, training, grouped cross-validation, comparison tables, and
// trajectory export.

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "piyield/dataset.hpp"
#include "piyield/fao56.hpp"
#include "piyield/report.hpp"
#include "piyield/train.hpp"

namespace {

using piyield::TrainConfig;

// Training keys are shared between the config file and the command line;
// flags win over file entries, which win over defaults.
void add_train_config_flags(CLI::App* cmd, std::map<std::string, std::string>& flag_kv) {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"epochs", "training epochs"},
      {"batch_size", "mini-batch size"},
      {"learning_rate", "optimizer step size"},
      {"weight_decay", "decoupled decay on weight matrices"},
      {"optimizer", "adam|sgd"},
      {"lambda_data", "weight of the squared-error term"},
      {"lambda_physics", "weight of the water-balance penalty"},
      {"folds", "cross-validation folds"},
      {"modality", "weather|spectral|spectral+weather"},
      {"model", "pi-rnn|rnn-baseline|simulation"},
      {"hidden", "recurrent state width"},
      {"head_width", "shared head width"},
      {"dropout", "head dropout rate"},
      {"val_fraction", "share of fields held out for the training log"},
      {"sim_ky", "fixed sensitivity of the simulation baseline"},
  };
  for (const auto& [key, help] : keys) {
    cmd->add_option_function<std::string>(
        "--" + key, [&flag_kv, key = key](const std::string& v) { flag_kv[key] = v; }, help);
  }
}

TrainConfig resolve_train_config(const std::string& config_path,
                                 const std::map<std::string, std::string>& flag_kv,
                                 std::uint64_t seed) {
  TrainConfig config;
  if (!config_path.empty()) piyield::apply_kv(config, piyield::read_kv_file(config_path));
  piyield::apply_kv(config, flag_kv);
  config.seed = seed;
  config.validate();
  return config;
}

piyield::FieldDataset load_dataset(const std::string& data_path, const std::string& field_sim_path) {
  piyield::FieldDataset dataset = piyield::ingest_csv(data_path);
  if (!field_sim_path.empty()) piyield::read_field_sim_csv(dataset, field_sim_path);
  return dataset;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"physics-informed crop yield-loss pipeline"};
  app.require_subcommand(1);
  std::function<int()> run;

  // ---- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic pixel dataset CSV");
  piyield::SynthConfig synth_config;
  std::string synth_out, synth_sim_out;
  synth->add_option("--out", synth_out, "output pixel CSV")->required();
  synth->add_option("--field-sim-out", synth_sim_out,
                    "also write the field-level simulated series CSV");
  synth->add_option("--fields", synth_config.n_fields, "number of fields");
  synth->add_option("--pixels", synth_config.pixels_per_field, "pixels per field");
  synth->add_option("--season-days", synth_config.season_length_days, "season length in days");
  synth->add_option("--interval", synth_config.observation_interval_days,
                    "days between observations");
  synth->add_option("--ky-min", synth_config.ky_min, "lower bound of pixel sensitivity");
  synth->add_option("--ky-max", synth_config.ky_max, "upper bound of pixel sensitivity");
  synth->add_option("--noise-sd", synth_config.noise_sd, "reflectance noise sd");
  synth->add_option("--seed", synth_config.seed, "generator seed");
  synth->add_option("--taw-min", synth_config.taw_min, "minimum field water capacity (mm)");
  synth->add_option("--taw-max", synth_config.taw_max, "maximum field water capacity (mm)");
  synth->add_option("--rain-prob-min", synth_config.rain_prob_min, "driest rain-day probability");
  synth->add_option("--rain-prob-max", synth_config.rain_prob_max, "wettest rain-day probability");
  synth->add_option("--rain-depth-min", synth_config.rain_depth_min, "min mean rain depth (mm)");
  synth->add_option("--rain-depth-max", synth_config.rain_depth_max, "max mean rain depth (mm)");
  synth->add_option("--drought-fields", synth_config.drought_fields,
                    "fields with limited rain (-1: all fields draw a regime)");
  synth->add_option("--elevation", synth_config.elevation_m, "station elevation (m)");
  synth->callback([&]() {
    run = [&]() {
      const piyield::FieldDataset dataset = piyield::synth_generate(synth_config);
      piyield::write_csv(dataset, synth_out);
      if (!synth_sim_out.empty()) piyield::write_field_sim_csv(dataset, synth_sim_out);
      std::printf("wrote %zu pixels from %d fields to %s (%s)\n", dataset.samples.size(),
                  synth_config.n_fields, synth_out.c_str(), dataset.provenance.c_str());
      return 0;
    };
  });

  // ---- simulate --------------------------------------------------------------
  auto* simulate = app.add_subcommand("simulate", "run the water-balance chain on a weather CSV");
  std::string sim_weather, sim_out;
  piyield::SoilBucket sim_bucket;
  double sim_elevation = 500.0;
  simulate->add_option("--weather", sim_weather, "input weather CSV")->required();
  simulate->add_option("--out", sim_out, "output per-day CSV (day,et0,etx,ks,eta)")->required();
  simulate->add_option("--taw", sim_bucket.total_available_water, "soil water capacity (mm)");
  simulate->add_option("--depletion-fraction", sim_bucket.depletion_fraction,
                       "readily available fraction p");
  simulate->add_option("--initial-depletion", sim_bucket.current_depletion,
                       "starting depletion (mm)");
  simulate->add_option("--elevation", sim_elevation, "station elevation (m)");
  simulate->callback([&]() {
    run = [&]() {
      const std::vector<piyield::WeatherDaily> weather = piyield::read_weather_csv(sim_weather);
      const piyield::CropCoefficientCurve curve =
          piyield::default_cereal_curve(static_cast<double>(weather.size()));
      const piyield::EtSeries series =
          piyield::simulate_season(weather, curve, sim_bucket, sim_elevation);
      piyield::write_et_series_csv(series, sim_out);
      std::printf("simulated %zu days to %s\n", weather.size(), sim_out.c_str());
      return 0;
    };
  });

  // ---- train -----------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train one model on a pixel dataset");
  std::string train_config_path, train_data, train_field_sim;
  std::string train_checkpoint = "checkpoint.txt", train_log = "training_log.csv";
  std::map<std::string, std::string> train_flags;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--config", train_config_path, "key=value config file");
  train_cmd->add_option("--data", train_data, "pixel dataset CSV")->required();
  train_cmd->add_option("--field-sim", train_field_sim, "field-level simulated series CSV");
  train_cmd->add_option("--checkpoint", train_checkpoint, "output checkpoint path");
  train_cmd->add_option("--log", train_log, "output training-log CSV");
  train_cmd->add_option("--seed", train_seed, "run seed")->required();
  add_train_config_flags(train_cmd, train_flags);
  train_cmd->callback([&]() {
    run = [&]() {
      const TrainConfig config = resolve_train_config(train_config_path, train_flags, train_seed);
      const piyield::FieldDataset dataset = load_dataset(train_data, train_field_sim);
      piyield::TrainedModel model;
      const piyield::TrainResult result = piyield::train(config, dataset, model);
      piyield::save_checkpoint(model, train_checkpoint);
      piyield::write_training_log_csv(result, train_log);
      if (result.diverged) {
        std::fprintf(stderr,
                     "training diverged after %d epochs; last finite checkpoint kept at %s\n",
                     result.completed_epochs, train_checkpoint.c_str());
        return 2;
      }
      const piyield::EpochLog& last = result.log.back();
      std::printf("trained %s for %d epochs: L_l=%.6f L_phys=%.6f L_total=%.6f\n",
                  piyield::to_string(config.model).c_str(), result.completed_epochs,
                  last.train_data, last.train_physics, last.train_total);
      return 0;
    };
  });

  // ---- crossval ----------------------------------------------------------------
  auto* crossval = app.add_subcommand("crossval", "grouped K-fold cross-validation");
  std::string cv_config_path, cv_data, cv_field_sim;
  std::string cv_json = "metrics.json", cv_csv = "metrics.csv";
  std::map<std::string, std::string> cv_flags;
  std::uint64_t cv_seed = 0;
  crossval->add_option("--config", cv_config_path, "key=value config file");
  crossval->add_option("--data", cv_data, "pixel dataset CSV")->required();
  crossval->add_option("--field-sim", cv_field_sim, "field-level simulated series CSV");
  crossval->add_option("--metrics-json", cv_json, "output metrics JSON");
  crossval->add_option("--metrics-csv", cv_csv, "output metrics CSV");
  crossval->add_option("--seed", cv_seed, "run seed")->required();
  add_train_config_flags(crossval, cv_flags);
  crossval->callback([&]() {
    run = [&]() {
      const TrainConfig config = resolve_train_config(cv_config_path, cv_flags, cv_seed);
      const piyield::FieldDataset dataset = load_dataset(cv_data, cv_field_sim);
      const piyield::EvalReport report = piyield::cross_validate(config, dataset);
      piyield::write_report_json(report, cv_json);
      piyield::write_metrics_csv(report, cv_csv);
      std::printf("%s/%s over %d folds: %s\n", report.model_name.c_str(),
                  report.modality_name.c_str(), report.folds, report.pooled.summary().c_str());
      return 0;
    };
  });

  // ---- report --------------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "combine crossval metrics into a comparison");
  std::vector<std::string> report_inputs;
  std::string report_csv, report_txt;
  report_cmd->add_option("--in", report_inputs, "metrics JSON files")->required()->expected(-1);
  report_cmd->add_option("--out-csv", report_csv, "write the comparison CSV here");
  report_cmd->add_option("--out-txt", report_txt, "write the human-readable table here");
  report_cmd->callback([&]() {
    run = [&]() {
      std::vector<piyield::EvalReport> reports;
      for (const auto& path : report_inputs) reports.push_back(piyield::read_report_json(path));
      const piyield::ComparisonTable table = piyield::report_tables(reports);
      std::fputs(table.human.c_str(), stdout);
      auto write_file = [](const std::string& path, const std::string& content) {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        if (!f) throw std::runtime_error("cannot open " + path);
        std::fwrite(content.data(), 1, content.size(), f);
        std::fclose(f);
      };
      if (!report_csv.empty()) write_file(report_csv, table.csv);
      if (!report_txt.empty()) write_file(report_txt, table.human);
      return 0;
    };
  });

  // ---- trajectories -----------------------------------------------------------------
  auto* traj = app.add_subcommand("trajectories", "export per-pixel ky/eta/etx/yl trajectories");
  std::string traj_checkpoint, traj_data, traj_out;
  traj->add_option("--checkpoint", traj_checkpoint, "trained pi-rnn checkpoint")->required();
  traj->add_option("--data", traj_data, "pixel dataset CSV")->required();
  traj->add_option("--out", traj_out, "output trajectory CSV")->required();
  traj->callback([&]() {
    run = [&]() {
      piyield::TrainedModel model = piyield::load_checkpoint(traj_checkpoint);
      const piyield::FieldDataset dataset = piyield::ingest_csv(traj_data);
      piyield::emit_trajectories(model, dataset, traj_out);
      std::printf("wrote trajectories for %zu pixels to %s\n", dataset.samples.size(),
                  traj_out.c_str());
      return 0;
    };
  });

  CLI11_PARSE(app, argc, argv);
  try {
    return run();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

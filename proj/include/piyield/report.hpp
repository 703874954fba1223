#pragma once

#include <string>
#include <vector>

#include "piyield/train.hpp"

namespace piyield {

// Metrics JSON is a pure function of the evaluation result (no timing or
// host fields), so identical runs serialize to identical bytes.
std::string report_json(const EvalReport& report);
void write_report_json(const EvalReport& report, const std::string& path);
EvalReport read_report_json(const std::string& path);

// Long-form CSV: one row per fold plus a pooled row, full precision.
void write_metrics_csv(const EvalReport& report, const std::string& path);

struct ComparisonTable {
  std::string human;  // aligned text, 2-decimal metrics
  std::string csv;    // full precision
};

// Model x modality comparison. Rows are grouped by model and ordered
// weather, spectral, spectral+weather within each model; the spectral+weather
// row carries the R2 delta against the weather-only run of the same model.
// Reports from different datasets are rejected.
ComparisonTable report_tables(const std::vector<EvalReport>& reports);

void write_training_log_csv(const TrainResult& result, const std::string& path);

// One row per (pixel, timestep) with the predicted sensitivity, water use,
// requirement, and composed yield loss. Requires a pi-rnn checkpoint trained
// on this dataset.
void emit_trajectories(TrainedModel& model, const FieldDataset& dataset, const std::string& path);

}  // namespace piyield

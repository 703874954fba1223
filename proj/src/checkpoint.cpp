#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "piyield/train.hpp"

namespace piyield {

namespace {

// Hex floats round-trip bit-exactly through text, which the determinism
// contract (same seed, same checkpoint bytes) relies on.
void write_values(std::ostream& out, std::span<const double> values) {
  char buf[48];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%a", values[i]);
    out << buf << (i + 1 < values.size() ? ' ' : '\n');
  }
  if (values.empty()) out << '\n';
}

double parse_hex_double(const std::string& token, const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size())
    throw std::runtime_error(path + ": bad numeric token '" + token + "'");
  return v;
}

std::vector<double> read_values(std::istream& in, std::size_t n, const std::string& path) {
  std::vector<double> values(n);
  std::string token;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in >> token)) throw std::runtime_error(path + ": truncated value block");
    values[i] = parse_hex_double(token, path);
  }
  return values;
}

void expect_key(std::istream& in, const std::string& key, std::string& value,
                const std::string& path) {
  std::string k;
  if (!(in >> k >> value) || k != key)
    throw std::runtime_error(path + ": expected '" + key + "' entry, got '" + k + "'");
}

}  // namespace

void save_checkpoint(const TrainedModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << "piyield-checkpoint v1\n";
  out << "model " << to_string(model.kind) << '\n';
  out << "modality " << to_string(model.modality) << '\n';
  out << "hidden " << model.hidden << '\n';
  out << "head_width " << model.head_width << '\n';
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", model.dropout);
  out << "dropout " << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%a", model.sim_ky);
  out << "sim_ky " << buf << '\n';
  out << "provenance " << (model.provenance.empty() ? "-" : model.provenance) << '\n';

  if (model.kind != ModelKind::Simulation) {
    out << "scaler " << model.scaler.mean.size() << '\n';
    write_values(out, model.scaler.mean);
    write_values(out, model.scaler.sd);

    const std::vector<Tensor> params = model.kind == ModelKind::PiRnn
                                           ? model.pi.parameters()
                                           : model.baseline.parameters();
    out << "tensors " << params.size() << '\n';
    for (const auto& p : params) {
      out << "tensor " << p.size() << '\n';
      write_values(out, p.values());
    }

    const BatchNormParams& bn = model.kind == ModelKind::PiRnn ? model.pi.head.bn
                                                               : model.baseline.head.bn;
    out << "bn_stats " << (bn.stats_ready ? 1 : 0) << ' ' << bn.running_mean.size() << '\n';
    write_values(out, bn.running_mean);
    write_values(out, bn.running_var);
  }
  out << "end\n";
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string magic, version;
  if (!(in >> magic >> version) || magic != "piyield-checkpoint" || version != "v1")
    throw std::runtime_error(path + ": not a v1 checkpoint");

  TrainedModel model;
  std::string value;
  expect_key(in, "model", value, path);
  model.kind = parse_model(value);
  expect_key(in, "modality", value, path);
  model.modality = parse_modality(value);
  expect_key(in, "hidden", value, path);
  model.hidden = std::stoul(value);
  expect_key(in, "head_width", value, path);
  model.head_width = std::stoul(value);
  expect_key(in, "dropout", value, path);
  model.dropout = parse_hex_double(value, path);
  expect_key(in, "sim_ky", value, path);
  model.sim_ky = parse_hex_double(value, path);
  expect_key(in, "provenance", value, path);
  model.provenance = value == "-" ? "" : value;

  if (model.kind != ModelKind::Simulation) {
    expect_key(in, "scaler", value, path);
    const std::size_t n_features = std::stoul(value);
    if (n_features != kInputFeatures)
      throw std::runtime_error(path + ": scaler width " + value + " does not match " +
                               std::to_string(kInputFeatures));
    model.scaler.modality = model.modality;
    model.scaler.mean = read_values(in, n_features, path);
    model.scaler.sd = read_values(in, n_features, path);

    if (model.kind == ModelKind::PiRnn) {
      model.pi.init(kInputFeatures, model.hidden, model.head_width, 0);
      model.pi.head.dropout_rate = model.dropout;
    } else {
      model.baseline.init(kInputFeatures, model.hidden, model.head_width, 0);
      model.baseline.head.dropout_rate = model.dropout;
    }
    std::vector<Tensor> params = model.kind == ModelKind::PiRnn ? model.pi.parameters()
                                                                : model.baseline.parameters();
    expect_key(in, "tensors", value, path);
    if (std::stoul(value) != params.size())
      throw std::runtime_error(path + ": expected " + std::to_string(params.size()) +
                               " tensors, file has " + value);
    for (auto& p : params) {
      expect_key(in, "tensor", value, path);
      if (std::stoul(value) != p.size())
        throw std::runtime_error(path + ": tensor size " + value + " does not match model (" +
                                 std::to_string(p.size()) + ")");
      const std::vector<double> loaded = read_values(in, p.size(), path);
      std::copy(loaded.begin(), loaded.end(), p.mutable_values().begin());
    }

    BatchNormParams& bn =
        model.kind == ModelKind::PiRnn ? model.pi.head.bn : model.baseline.head.bn;
    std::string ready, width;
    std::string key;
    if (!(in >> key >> ready >> width) || key != "bn_stats")
      throw std::runtime_error(path + ": expected bn_stats entry");
    if (std::stoul(width) != bn.running_mean.size())
      throw std::runtime_error(path + ": bn_stats width mismatch");
    bn.stats_ready = ready == "1";
    bn.running_mean = read_values(in, bn.running_mean.size(), path);
    bn.running_var = read_values(in, bn.running_var.size(), path);
  }

  std::string tail;
  if (!(in >> tail) || tail != "end") throw std::runtime_error(path + ": missing end marker");
  return model;
}

}  // namespace piyield

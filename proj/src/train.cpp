#include "piyield/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "piyield/io_util.hpp"
#include "piyield/rng.hpp"

namespace piyield {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::PiRnn: return "pi-rnn";
    case ModelKind::RnnBaseline: return "rnn-baseline";
    case ModelKind::Simulation: return "simulation";
  }
  return "?";
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::Weather: return "weather";
    case Modality::Spectral: return "spectral";
    case Modality::SpectralWeather: return "spectral+weather";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "' (adam|sgd)");
}

ModelKind parse_model(const std::string& s) {
  if (s == "pi-rnn") return ModelKind::PiRnn;
  if (s == "rnn-baseline") return ModelKind::RnnBaseline;
  if (s == "simulation") return ModelKind::Simulation;
  throw std::invalid_argument("unknown model '" + s + "' (pi-rnn|rnn-baseline|simulation)");
}

Modality parse_modality(const std::string& s) {
  if (s == "weather") return Modality::Weather;
  if (s == "spectral") return Modality::Spectral;
  if (s == "spectral+weather") return Modality::SpectralWeather;
  throw std::invalid_argument("unknown modality '" + s + "' (weather|spectral|spectral+weather)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(weight_decay >= 0.0))
    throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (folds < 2) throw std::invalid_argument("TrainConfig: folds must be >= 2");
  if (hidden < 1 || head_width < 1)
    throw std::invalid_argument("TrainConfig: model widths must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("TrainConfig: dropout must lie in [0,1)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("TrainConfig: val_fraction must lie in [0,1)");
  if (!(sim_ky > 0.0)) throw std::invalid_argument("TrainConfig: sim_ky must be > 0");
  LossWeights{lambda_data, lambda_physics}.validate();
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"learning_rate", format_double(learning_rate)},
      {"weight_decay", format_double(weight_decay)},
      {"optimizer", to_string(optimizer)},
      {"lambda_data", format_double(lambda_data)},
      {"lambda_physics", format_double(lambda_physics)},
      {"folds", std::to_string(folds)},
      {"seed", std::to_string(seed)},
      {"modality", to_string(modality)},
      {"model", to_string(model)},
      {"hidden", std::to_string(hidden)},
      {"head_width", std::to_string(head_width)},
      {"dropout", format_double(dropout)},
      {"val_fraction", format_double(val_fraction)},
      {"sim_ky", format_double(sim_ky)},
  };
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': cannot parse integer '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size() || !std::isfinite(v)) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': cannot parse number '" + value + "'");
  }
}

}  // namespace

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                               "'");
  }
  return kv;
}

void apply_kv(TrainConfig& config, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "epochs") config.epochs = parse_int(key, value);
    else if (key == "batch_size") config.batch_size = parse_int(key, value);
    else if (key == "learning_rate") config.learning_rate = parse_real(key, value);
    else if (key == "weight_decay") config.weight_decay = parse_real(key, value);
    else if (key == "optimizer") config.optimizer = parse_optimizer(value);
    else if (key == "lambda_data") config.lambda_data = parse_real(key, value);
    else if (key == "lambda_physics") config.lambda_physics = parse_real(key, value);
    else if (key == "folds") config.folds = parse_int(key, value);
    else if (key == "seed") config.seed = std::strtoull(value.c_str(), nullptr, 10);
    else if (key == "modality") config.modality = parse_modality(value);
    else if (key == "model") config.model = parse_model(value);
    else if (key == "hidden") config.hidden = parse_int(key, value);
    else if (key == "head_width") config.head_width = parse_int(key, value);
    else if (key == "dropout") config.dropout = parse_real(key, value);
    else if (key == "val_fraction") config.val_fraction = parse_real(key, value);
    else if (key == "sim_ky") config.sim_ky = parse_real(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

namespace {

// Weather channels fused per window: rain sum, mean temperature, crop demand,
// and the demand change against the previous window. The change channel hands
// the heads the senescence decline directly instead of leaving it to the
// recurrent state, which tracks it one window late.
double weather_feature(const PixelSample& s, std::size_t t, std::size_t c) {
  switch (c) {
    case 0: return s.precip_mm[t];
    case 1: return s.temp_c[t];
    case 2: return s.etx_mm[t];
    default: return t == 0 ? 0.0 : s.etx_mm[t] - s.etx_mm[t - 1];
  }
}

}  // namespace

void FeatureScaler::fit(const FieldDataset& dataset, std::span<const std::size_t> idx, Modality m) {
  if (idx.empty()) throw std::invalid_argument("FeatureScaler: empty fit set");
  modality = m;
  mean.assign(kInputFeatures, 0.0);
  sd.assign(kInputFeatures, 0.0);

  const bool use_spectral = m != Modality::Weather;
  const bool use_weather = m != Modality::Spectral;

  std::size_t rows = 0;
  std::vector<double> sum(kInputFeatures, 0.0), sum_sq(kInputFeatures, 0.0);
  for (std::size_t i : idx) {
    const PixelSample& s = dataset.samples.at(i);
    for (std::size_t t = 0; t < s.timesteps(); ++t) {
      ++rows;
      for (std::size_t c = 0; c < kInputFeatures; ++c) {
        double v = 0.0;
        if (c < kSpectralBands) {
          if (use_spectral) v = s.spectral[t * kSpectralBands + c];
        } else if (use_weather) {
          v = weather_feature(s, t, c - kSpectralBands);
        }
        sum[c] += v;
        sum_sq[c] += v * v;
      }
    }
  }
  for (std::size_t c = 0; c < kInputFeatures; ++c) {
    mean[c] = sum[c] / static_cast<double>(rows);
    const double var = std::max(0.0, sum_sq[c] / static_cast<double>(rows) - mean[c] * mean[c]);
    sd[c] = std::sqrt(var);
    if (sd[c] < 1e-12) {  // constant channel (e.g. a zeroed modality)
      mean[c] = 0.0;
      sd[c] = 1.0;
    }
  }
}

std::vector<double> FeatureScaler::transform(const PixelSample& sample) const {
  if (mean.size() != kInputFeatures || sd.size() != kInputFeatures)
    throw std::logic_error("FeatureScaler: transform before fit");
  const bool use_spectral = modality != Modality::Weather;
  const bool use_weather = modality != Modality::Spectral;
  std::vector<double> out(sample.timesteps() * kInputFeatures, 0.0);
  for (std::size_t t = 0; t < sample.timesteps(); ++t) {
    for (std::size_t c = 0; c < kInputFeatures; ++c) {
      double v = 0.0;
      if (c < kSpectralBands) {
        if (use_spectral) v = sample.spectral[t * kSpectralBands + c];
      } else if (use_weather) {
        v = weather_feature(sample, t, c - kSpectralBands);
      }
      out[t * kInputFeatures + c] = (v - mean[c]) / sd[c];
    }
  }
  return out;
}

namespace {

// All sequence models batch across pixels, so every sample must share one
// observation calendar.
void require_uniform_calendar(const FieldDataset& dataset) {
  if (dataset.samples.empty()) throw std::invalid_argument("dataset is empty");
  const auto& days = dataset.samples.front().days;
  for (const auto& s : dataset.samples)
    if (s.days != days)
      throw std::invalid_argument("pixel " + s.field_id + "/" + s.pixel_id +
                                  " has a different observation calendar; batching requires "
                                  "uniform timesteps");
}

}  // namespace

Batch make_batch(const FieldDataset& dataset, const FeatureScaler& scaler,
                 std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty index set");
  const std::size_t n = idx.size();
  const std::size_t t_count = dataset.samples.at(idx.front()).timesteps();
  std::vector<std::vector<double>> inputs(t_count, std::vector<double>(n * kInputFeatures));
  std::vector<std::vector<double>> etx(t_count, std::vector<double>(n));
  std::vector<double> targets(n);
  for (std::size_t r = 0; r < n; ++r) {
    const PixelSample& s = dataset.samples.at(idx[r]);
    const std::vector<double> features = scaler.transform(s);
    for (std::size_t t = 0; t < t_count; ++t) {
      std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(t * kInputFeatures),
                  kInputFeatures, inputs[t].begin() + static_cast<std::ptrdiff_t>(r * kInputFeatures));
      etx[t][r] = s.etx_mm[t];
    }
    targets[r] = s.target_yl;
  }
  Batch batch;
  batch.n = n;
  for (std::size_t t = 0; t < t_count; ++t) {
    batch.inputs.push_back(Tensor::matrix(n, kInputFeatures, std::move(inputs[t])));
    batch.etx.push_back(Tensor::matrix(n, 1, std::move(etx[t])));
  }
  batch.targets = Tensor::matrix(n, 1, std::move(targets));
  return batch;
}

namespace {

struct LossParts {
  double data = 0.0;
  double physics = 0.0;
  double total = 0.0;
};

// Squared error of every step's prediction against the season target. Fitting
// only the last step leaves the earlier sensitivities unconstrained, and the
// final one then just rescales whatever cumulative ratio it is handed; per-step
// supervision is also what makes in-season predictions worth reporting.
Tensor anytime_data_loss(const std::vector<Tensor>& preds, const Tensor& targets) {
  const double kStepRatio = 0.85;   // per-step decay of supervision, final step backwards
  const double kFloor = 0.05;       // anchors pre-signal steps near the running mean
  const double kFinalExtra = 0.15;  // season outcome is the deliverable, give it extra pull
  Tensor sum;
  double w_sum = 0.0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    double w = std::max(std::pow(kStepRatio, static_cast<double>(preds.size() - 1 - t)), kFloor);
    w_sum += w;
    Tensor l = scale(data_loss(preds[t], targets), w);
    sum = sum.size() == 0 ? std::move(l) : add(sum, l);
  }
  return add(scale(sum, 1.0 / w_sum), scale(data_loss(preds.back(), targets), kFinalExtra));
}

// Forward pass plus the three loss components. When a tape is active the
// returned total stays connected for backward.
LossParts model_losses(TrainedModel& model, const Batch& batch, const LossWeights& weights,
                       bool training, SplitMix64& dropout_rng, Tensor* total_out) {
  LossParts parts;
  Tensor l_data, l_phys;
  if (model.kind == ModelKind::PiRnn) {
    ModelOutput out = pi_rnn_forward(model.pi, batch, training, dropout_rng);
    l_data = anytime_data_loss(out.yield_loss, batch.targets);
    l_phys = physics_loss(out.eta, batch.etx);
  } else if (model.kind == ModelKind::RnnBaseline) {
    std::vector<Tensor> preds = baseline_rnn_forward(model.baseline, batch, training, dropout_rng);
    l_data = anytime_data_loss(preds, batch.targets);
    l_phys = Tensor::scalar(0.0);  // no water-use head to constrain
  } else {
    throw std::invalid_argument("simulation baseline has no trainable parameters");
  }
  Tensor total = total_loss(l_data, l_phys, weights);
  parts.data = l_data.value();
  parts.physics = l_phys.value();
  parts.total = total.value();
  if (total_out) *total_out = total;
  return parts;
}

class Optimizer {
 public:
  // decay_scale holds a per-tensor multiplier on the decoupled weight decay.
  Optimizer(OptimizerKind kind, double lr, double weight_decay, std::vector<Tensor> params,
            std::vector<double> decay_scale)
      : kind_(kind),
        lr_(lr),
        weight_decay_(weight_decay),
        params_(std::move(params)),
        decay_scale_(std::move(decay_scale)) {
    if (decay_scale_.size() != params_.size())
      throw std::invalid_argument("Optimizer: decay scale per parameter tensor required");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].size(), 0.0);
      v_[i].assign(params_[i].size(), 0.0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }

  void step() {
    ++t_;
    // Global norm clip. Occasional batches spike the gradient hard enough to
    // kick the water-use head across the feasibility boundary in one step;
    // the clip caps those events without touching ordinary updates.
    double sumsq = 0.0;
    for (const auto& p : params_)
      for (double g : p.grad()) sumsq += g * g;
    const double norm = std::sqrt(sumsq);
    const double gs = norm > kMaxGradNorm ? kMaxGradNorm / norm : 1.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto values = params_[i].mutable_values();
      const auto grad = params_[i].grad();
      const double decay = weight_decay_ * decay_scale_[i];
      if (decay > 0.0)
        for (auto& v : values) v -= lr_ * decay * v;
      if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t j = 0; j < values.size(); ++j) values[j] -= lr_ * gs * grad[j];
      } else {
        const double bc1 = 1.0 - std::pow(kBeta1, t_);
        const double bc2 = 1.0 - std::pow(kBeta2, t_);
        for (std::size_t j = 0; j < values.size(); ++j) {
          const double g = gs * grad[j];
          m_[i][j] = kBeta1 * m_[i][j] + (1.0 - kBeta1) * g;
          v_[i][j] = kBeta2 * v_[i][j] + (1.0 - kBeta2) * g * g;
          values[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + kEps);
        }
      }
      params_[i].zero_grad();
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  static constexpr double kMaxGradNorm = 1.0;
  OptimizerKind kind_;
  double lr_;
  double weight_decay_;
  int t_ = 0;
  std::vector<Tensor> params_;
  std::vector<double> decay_scale_;
  std::vector<std::vector<double>> m_, v_;
};

struct ModelSnapshot {
  std::vector<std::vector<double>> values;
  std::vector<double> bn_mean, bn_var;
  bool bn_ready = false;
};

BatchNormParams& model_bn(TrainedModel& model) {
  return model.kind == ModelKind::PiRnn ? model.pi.head.bn : model.baseline.head.bn;
}

std::vector<Tensor> model_params(TrainedModel& model) {
  return model.kind == ModelKind::PiRnn ? model.pi.parameters() : model.baseline.parameters();
}

// Weight matrices decay at the configured rate, biases and normalisation
// parameters not at all, and the sensitivity head an order of magnitude
// harder, bias included. The composed prediction is invariant under
// sensitivity-up / deficit-down rescaling, and the within-bounds pull of the
// water-balance penalty constantly pushes along that valley (shrinking the
// deficit and inflating the sensitivity to compensate); an anchor on the
// sensitivity head is what gives that walk a finite resting point.
std::vector<double> model_decay_scales(const TrainedModel& model) {
  std::vector<double> scales;
  const auto params =
      model.kind == ModelKind::PiRnn ? model.pi.parameters() : model.baseline.parameters();
  for (const auto& p : params) scales.push_back(p.shape().size() >= 2 ? 1.0 : 0.0);
  if (model.kind == ModelKind::PiRnn) {
    // ky_out.w, ky_out.b are the last four tensors' first two (see parameters())
    const std::size_t n = scales.size();
    scales[n - 4] = 30.0;
    scales[n - 3] = 30.0;
  }
  return scales;
}

ModelSnapshot take_snapshot(TrainedModel& model) {
  ModelSnapshot snap;
  for (const auto& p : model_params(model))
    snap.values.emplace_back(p.values().begin(), p.values().end());
  const BatchNormParams& bn = model_bn(model);
  snap.bn_mean = bn.running_mean;
  snap.bn_var = bn.running_var;
  snap.bn_ready = bn.stats_ready;
  return snap;
}

void restore_snapshot(TrainedModel& model, const ModelSnapshot& snap) {
  auto params = model_params(model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    std::copy(snap.values[i].begin(), snap.values[i].end(), values.begin());
    params[i].zero_grad();
  }
  BatchNormParams& bn = model_bn(model);
  bn.running_mean = snap.bn_mean;
  bn.running_var = snap.bn_var;
  bn.stats_ready = snap.bn_ready;
}

// Average loss components over an index set in eval mode, weighted by batch
// size. Returns nothing when idx is empty.
std::optional<LossParts> eval_losses(TrainedModel& model, const FieldDataset& dataset,
                                     const LossWeights& weights,
                                     std::span<const std::size_t> idx) {
  if (idx.empty()) return std::nullopt;
  SplitMix64 unused(0);
  LossParts acc;
  std::size_t done = 0;
  constexpr std::size_t kChunk = 256;
  while (done < idx.size()) {
    const std::size_t n = std::min(kChunk, idx.size() - done);
    Batch batch = make_batch(dataset, model.scaler, idx.subspan(done, n));
    const LossParts parts = model_losses(model, batch, weights, false, unused, nullptr);
    acc.data += parts.data * static_cast<double>(n);
    acc.physics += parts.physics * static_cast<double>(n);
    acc.total += parts.total * static_cast<double>(n);
    done += n;
  }
  const double total_n = static_cast<double>(idx.size());
  return LossParts{acc.data / total_n, acc.physics / total_n, acc.total / total_n};
}

}  // namespace

TrainResult train_on_split(const TrainConfig& config, const FieldDataset& dataset,
                           std::span<const std::size_t> train_idx,
                           std::span<const std::size_t> val_idx, std::uint64_t seed,
                           TrainedModel& model) {
  config.validate();
  require_uniform_calendar(dataset);
  if (config.model == ModelKind::Simulation)
    throw std::invalid_argument("simulation baseline has no trainable parameters");
  if (train_idx.size() < 2)
    throw std::invalid_argument("train: need at least 2 training pixels");

  model.kind = config.model;
  model.modality = config.modality;
  model.hidden = static_cast<std::size_t>(config.hidden);
  model.head_width = static_cast<std::size_t>(config.head_width);
  model.dropout = config.dropout;
  model.sim_ky = config.sim_ky;
  model.provenance = dataset.provenance;
  model.scaler.fit(dataset, train_idx, config.modality);

  if (config.model == ModelKind::PiRnn) {
    model.pi.init(kInputFeatures, model.hidden, model.head_width, mix_seed(seed, 1));
    model.pi.head.dropout_rate = config.dropout;
  } else {
    model.baseline.init(kInputFeatures, model.hidden, model.head_width, mix_seed(seed, 1));
    model.baseline.head.dropout_rate = config.dropout;
  }

  const LossWeights weights{config.lambda_data, config.lambda_physics};
  Optimizer optimizer(config.optimizer, config.learning_rate, config.weight_decay,
                      model_params(model), model_decay_scales(model));
  SplitMix64 dropout_rng(mix_seed(seed, 3));

  TrainResult result;
  ModelSnapshot last_good = take_snapshot(model);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // cosine decay to 1% of the base rate; the fixed epoch budget has no
    // early stopping, so the end state must sit still in its minimum
    if (config.epochs > 1) {
      const double phase = static_cast<double>(epoch - 1) / static_cast<double>(config.epochs - 1);
      optimizer.set_lr(config.learning_rate *
                       (0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * phase))));
    }
    SplitMix64 shuffle_rng(mix_seed(seed, 2, static_cast<std::uint64_t>(epoch)));
    const std::vector<std::size_t> order = shuffled_indices(train_idx.size(), shuffle_rng);

    LossParts epoch_acc;
    bool finite = true;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                            order.size() - cursor);
      // batch statistics need >= 2 rows; absorb a trailing singleton
      if (order.size() - cursor - n == 1) ++n;
      std::vector<std::size_t> chunk(n);
      for (std::size_t i = 0; i < n; ++i) chunk[i] = train_idx[order[cursor + i]];
      cursor += n;

      Tensor total;
      LossParts parts;
      {
        Tape tape;
        parts = model_losses(model, make_batch(dataset, model.scaler, chunk), weights, true,
                             dropout_rng, &total);
        if (!std::isfinite(parts.total)) {
          finite = false;
          break;
        }
        tape.backward(total);
      }
      optimizer.step();
      epoch_acc.data += parts.data * static_cast<double>(n);
      epoch_acc.physics += parts.physics * static_cast<double>(n);
      epoch_acc.total += parts.total * static_cast<double>(n);
    }

    if (!finite) {
      restore_snapshot(model, last_good);
      result.diverged = true;
      break;
    }

    EpochLog log;
    log.epoch = epoch;
    const double n_train = static_cast<double>(train_idx.size());
    log.train_data = epoch_acc.data / n_train;
    log.train_physics = epoch_acc.physics / n_train;
    log.train_total = epoch_acc.total / n_train;
    if (const auto val = eval_losses(model, dataset, weights, val_idx)) {
      log.val_data = val->data;
      log.val_physics = val->physics;
      log.val_total = val->total;
      if (!std::isfinite(val->total)) {
        restore_snapshot(model, last_good);
        result.diverged = true;
        break;
      }
    }
    result.log.push_back(log);
    result.completed_epochs = epoch;
    last_good = take_snapshot(model);
  }
  return result;
}

TrainResult train(const TrainConfig& config, const FieldDataset& dataset, TrainedModel& model) {
  config.validate();
  require_uniform_calendar(dataset);

  const std::vector<std::string> fields = dataset.field_ids();
  std::vector<std::size_t> train_idx, val_idx;
  if (config.val_fraction > 0.0 && fields.size() >= 2) {
    SplitMix64 rng(mix_seed(config.seed, 7));
    const std::vector<std::size_t> order = shuffled_indices(fields.size(), rng);
    std::size_t n_val = static_cast<std::size_t>(
        std::llround(config.val_fraction * static_cast<double>(fields.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, fields.size() - 1);
    std::set<std::string> val_fields;
    for (std::size_t i = 0; i < n_val; ++i) val_fields.insert(fields[order[i]]);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      if (val_fields.count(dataset.samples[i].field_id))
        val_idx.push_back(i);
      else
        train_idx.push_back(i);
    }
  } else {
    train_idx.resize(dataset.samples.size());
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  }
  return train_on_split(config, dataset, train_idx, val_idx, config.seed, model);
}

std::vector<double> predict_trajectories(TrainedModel& model, const FieldDataset& dataset,
                                         std::span<const std::size_t> idx) {
  if (idx.empty()) return {};
  require_uniform_calendar(dataset);
  const std::size_t t_count = dataset.samples.front().timesteps();

  if (model.kind == ModelKind::Simulation) {
    // Fixed-sensitivity response on the field-level simulated series: every
    // pixel of a field shares its trajectory.
    std::vector<double> out(idx.size() * t_count);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const PixelSample& s = dataset.samples.at(idx[r]);
      const auto it = dataset.field_sim.find(s.field_id);
      if (it == dataset.field_sim.end())
        throw std::runtime_error("simulation baseline: no field-level series for " + s.field_id);
      const FieldSeries& series = it->second;
      if (series.days != s.days)
        throw std::runtime_error("simulation baseline: field series calendar mismatch for " +
                                 s.field_id);
      double cum_eta = 0.0, cum_etx = 0.0;
      for (std::size_t t = 0; t < t_count; ++t) {
        cum_eta += std::clamp(series.eta_mm[t], 0.0, series.etx_mm[t]);
        cum_etx += series.etx_mm[t];
        if (!(cum_etx > 0.0))
          throw std::domain_error("simulation baseline: cumulative requirement not positive");
        out[r * t_count + t] =
            std::clamp(model.sim_ky * (1.0 - cum_eta / cum_etx), 0.0, 1.0);
      }
    }
    return out;
  }

  if (model.provenance != dataset.provenance)
    throw std::invalid_argument("model was trained on '" + model.provenance +
                                "' but dataset is '" + dataset.provenance + "'");

  std::vector<double> out(idx.size() * t_count);
  SplitMix64 unused(0);
  constexpr std::size_t kChunk = 256;
  std::size_t done = 0;
  while (done < idx.size()) {
    const std::size_t n = std::min(kChunk, idx.size() - done);
    Batch batch = make_batch(dataset, model.scaler, idx.subspan(done, n));
    std::vector<Tensor> steps;
    if (model.kind == ModelKind::PiRnn)
      steps = pi_rnn_forward(model.pi, batch, false, unused).yield_loss;
    else
      steps = baseline_rnn_forward(model.baseline, batch, false, unused);
    for (std::size_t t = 0; t < t_count; ++t) {
      const auto values = steps[t].values();
      for (std::size_t r = 0; r < n; ++r) out[(done + r) * t_count + t] = values[r];
    }
    done += n;
  }
  return out;
}

double fraction_eta_in_bounds(TrainedModel& model, const FieldDataset& dataset,
                              std::span<const std::size_t> idx) {
  if (model.kind != ModelKind::PiRnn)
    throw std::invalid_argument("fraction_eta_in_bounds: model has no water-use head");
  if (idx.empty()) throw std::invalid_argument("fraction_eta_in_bounds: empty index set");
  require_uniform_calendar(dataset);
  SplitMix64 unused(0);
  std::size_t within = 0, total = 0;
  constexpr std::size_t kChunk = 256;
  std::size_t done = 0;
  while (done < idx.size()) {
    const std::size_t n = std::min(kChunk, idx.size() - done);
    Batch batch = make_batch(dataset, model.scaler, idx.subspan(done, n));
    ModelOutput out = pi_rnn_forward(model.pi, batch, false, unused);
    for (std::size_t t = 0; t < out.eta.size(); ++t) {
      const auto eta = out.eta[t].values();
      const auto etx = batch.etx[t].values();
      for (std::size_t r = 0; r < n; ++r) {
        within += (eta[r] >= 0.0 && eta[r] <= etx[r]) ? 1 : 0;
        ++total;
      }
    }
    done += n;
  }
  return static_cast<double>(within) / static_cast<double>(total);
}

EvalReport cross_validate(const TrainConfig& config, const FieldDataset& dataset) {
  config.validate();
  require_uniform_calendar(dataset);

  EvalReport report;
  report.model_name = to_string(config.model);
  report.modality_name = to_string(config.modality);
  report.provenance = dataset.provenance;
  report.folds = config.folds;
  report.config = config;

  const std::vector<FoldSplit> folds = kfold_split(dataset, config.folds, config.seed);
  const std::size_t t_count = dataset.samples.front().timesteps();
  const auto& days = dataset.samples.front().days;

  std::vector<double> pooled_pred, pooled_true;                  // final step
  std::vector<std::vector<double>> pooled_step(t_count);         // per horizon
  pooled_pred.reserve(dataset.samples.size());
  double bounds_weighted = 0.0;
  std::size_t bounds_n = 0;

  for (int f = 0; f < config.folds; ++f) {
    const FoldSplit& fold = folds[static_cast<std::size_t>(f)];
    TrainedModel model;
    FoldReport fold_report;
    fold_report.fold = f;

    if (config.model == ModelKind::Simulation) {
      model.kind = ModelKind::Simulation;
      model.sim_ky = config.sim_ky;
      model.provenance = dataset.provenance;
    } else {
      const TrainResult tr =
          train_on_split(config, dataset, fold.train_idx, {}, mix_seed(config.seed, 100, f), model);
      fold_report.diverged = tr.diverged;
    }

    if (config.model == ModelKind::PiRnn) {
      bounds_weighted +=
          fraction_eta_in_bounds(model, dataset, fold.val_idx) * fold.val_idx.size();
      bounds_n += fold.val_idx.size();
    }

    const std::vector<double> traj = predict_trajectories(model, dataset, fold.val_idx);
    std::vector<double> fold_pred(fold.val_idx.size()), fold_true(fold.val_idx.size());
    for (std::size_t r = 0; r < fold.val_idx.size(); ++r) {
      fold_pred[r] = traj[r * t_count + (t_count - 1)];
      fold_true[r] = dataset.samples[fold.val_idx[r]].target_yl;
      for (std::size_t t = 0; t < t_count; ++t)
        pooled_step[t].push_back(traj[r * t_count + t]);
      pooled_pred.push_back(fold_pred[r]);
      pooled_true.push_back(fold_true[r]);
    }
    fold_report.metrics = metrics(fold_pred, fold_true);
    report.per_fold.push_back(fold_report);
  }

  report.pooled = metrics(pooled_pred, pooled_true);

  // fold-wise mean and sample sd, fixed summation order
  const double k = static_cast<double>(config.folds);
  double mae_sum = 0.0, rmse_sum = 0.0, r2_sum = 0.0;
  bool all_r2 = true;
  for (const auto& fr : report.per_fold) {
    mae_sum += fr.metrics.mae;
    rmse_sum += fr.metrics.rmse;
    if (fr.metrics.r2)
      r2_sum += *fr.metrics.r2;
    else
      all_r2 = false;
  }
  report.mae_mean = mae_sum / k;
  report.rmse_mean = rmse_sum / k;
  double mae_dev = 0.0, rmse_dev = 0.0, r2_dev = 0.0;
  for (const auto& fr : report.per_fold) {
    mae_dev += (fr.metrics.mae - report.mae_mean) * (fr.metrics.mae - report.mae_mean);
    rmse_dev += (fr.metrics.rmse - report.rmse_mean) * (fr.metrics.rmse - report.rmse_mean);
  }
  report.mae_sd = std::sqrt(mae_dev / (k - 1.0));
  report.rmse_sd = std::sqrt(rmse_dev / (k - 1.0));
  if (all_r2) {
    report.r2_mean = r2_sum / k;
    for (const auto& fr : report.per_fold)
      r2_dev += (*fr.metrics.r2 - *report.r2_mean) * (*fr.metrics.r2 - *report.r2_mean);
    report.r2_sd = std::sqrt(r2_dev / (k - 1.0));
  }

  for (std::size_t t = 0; t < t_count; ++t) {
    report.horizon_days_before.push_back(days.back() - days[t]);
    report.horizon_r2.push_back(metrics(pooled_step[t], pooled_true).r2);
  }
  if (bounds_n > 0) report.eta_in_bounds = bounds_weighted / static_cast<double>(bounds_n);
  return report;
}

}  // namespace piyield

#include "mcsformer/traineval.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "mcsformer/error.hpp"

namespace mcsformer::train {

std::string to_string(LossKind k) { return k == LossKind::Mse ? "mse" : "custom"; }

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "custom") return LossKind::Custom;
  throw Error(ErrorCode::InvalidConfig, "unknown loss '" + s + "' (expected mse or custom)");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw Error(ErrorCode::InvalidConfig, "lambda must be finite and >= 0");
}

TrainConfig TrainConfig::desk() {
  TrainConfig cfg;
  cfg.learning_rate = 3e-4;
  cfg.epochs = 30;
  return cfg;
}

void TrainConfig::validate(std::size_t dataset_size) const {
  if (!(learning_rate > 0.0) || batch_size < 1 || epochs < 0 || !(beta1 > 0.0 && beta1 < 1.0) ||
      !(beta2 > 0.0 && beta2 < 1.0) || !(eps > 0.0))
    throw Error(ErrorCode::InvalidConfig, "training hyperparameters out of range");
  if (batch_size > dataset_size)
    throw Error(ErrorCode::InvalidConfig, "batch size " + std::to_string(batch_size) +
                                              " exceeds dataset size " +
                                              std::to_string(dataset_size));
}

std::vector<double> PredictionBatch::errors() const {
  std::vector<double> e(preds.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = preds[i] - targets[i];
  return e;
}

void PredictionBatch::validate() const {
  if (preds.empty()) throw Error(ErrorCode::EmptyBatch, "prediction batch is empty");
  if (preds.size() != targets.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(preds.size()) + " predictions vs " +
                                               std::to_string(targets.size()) + " targets");
  for (double y : targets)
    if (!(y >= 0.0 && y <= 1.0))
      throw Error(ErrorCode::InvalidConfig, "target " + std::to_string(y) + " outside [0, 1]");
}

double custom_loss(const PredictionBatch& batch, double lambda) {
  batch.validate();
  LossConfig{LossKind::Custom, lambda}.validate();
  double total = 0.0;
  for (double e : batch.errors()) total += e * e + lambda * std::max(0.0, e);
  return total / static_cast<double>(batch.preds.size());
}

double mse_loss(const PredictionBatch& batch) {
  batch.validate();
  double total = 0.0;
  for (double e : batch.errors()) total += e * e;
  return total / static_cast<double>(batch.preds.size());
}

ad::Tensor mse_loss(const ad::Tensor& pred, const ad::Tensor& target) {
  if (pred.numel() == 0) throw Error(ErrorCode::EmptyBatch, "empty prediction tensor");
  const ad::Tensor diff = ad::sub(pred, target);
  return ad::mean(ad::mul(diff, diff));
}

ad::Tensor custom_loss(const ad::Tensor& pred, const ad::Tensor& target, double lambda) {
  if (pred.numel() == 0) throw Error(ErrorCode::EmptyBatch, "empty prediction tensor");
  LossConfig{LossKind::Custom, lambda}.validate();
  const ad::Tensor diff = ad::sub(pred, target);
  const ad::Tensor per_sample = ad::add(ad::mul(diff, diff), ad::scale(ad::relu(diff), lambda));
  return ad::mean(per_sample);
}

ad::Tensor loss(const LossConfig& cfg, const ad::Tensor& pred, const ad::Tensor& target) {
  return cfg.kind == LossKind::Mse ? mse_loss(pred, target)
                                   : custom_loss(pred, target, cfg.lambda);
}

double mae(const PredictionBatch& batch) {
  batch.validate();
  double total = 0.0;
  for (double e : batch.errors()) total += std::abs(e);
  return total / static_cast<double>(batch.preds.size());
}

double score_term(double error) {
  return error < 0.0 ? std::exp(-error / 15.0) - 1.0 : std::exp(error / 5.0) - 1.0;
}

double score(const PredictionBatch& batch, Aggregation aggregation) {
  batch.validate();
  double total = 0.0;
  for (double e : batch.errors()) total += score_term(e);
  return aggregation == Aggregation::Sum ? total
                                         : total / static_cast<double>(batch.preds.size());
}

double late_fraction(const PredictionBatch& batch) {
  batch.validate();
  std::size_t late = 0;
  for (double e : batch.errors())
    if (e > 0.0) ++late;
  return static_cast<double>(late) / static_cast<double>(batch.preds.size());
}

Metrics evaluate(const PredictionBatch& batch) {
  Metrics m;
  m.mae = mae(batch);
  m.score_sum = score(batch, Aggregation::Sum);
  m.score_mean = score(batch, Aggregation::Mean);
  m.late_fraction = late_fraction(batch);
  m.count = batch.preds.size();
  return m;
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const TrainConfig& cfg, std::uint64_t t) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
    throw Error(ErrorCode::ShapeMismatch, "Adam buffers disagree with parameter size");
  if (t < 1) throw Error(ErrorCode::InvalidConfig, "Adam step counter starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void adam_step(std::vector<ad::Tensor>& params, AdamState& state, const TrainConfig& cfg,
               std::uint64_t t) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "Adam state tracks a different parameter list");
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    std::span<const double> g = p.grad();
    if (!p.has_grad()) {
      zeros.assign(p.numel(), 0.0);
      g = zeros;
    }
    adam_update(p.mutable_data(), g, state.m[i], state.v[i], cfg, t);
  }
}

PredictionBatch predictions(const model::ModelParams& params, const model::ModelConfig& cfg,
                            const std::vector<features::LabeledSample>& samples) {
  PredictionBatch b;
  b.preds = model::predict(params, cfg, samples);
  for (const auto& s : samples) b.targets.push_back(s.label);
  return b;
}

TrainResult train(const std::vector<features::LabeledSample>& dataset,
                  const model::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const LossConfig& loss_cfg,
                  const std::vector<features::LabeledSample>& validation,
                  const EpochCallback& on_epoch) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  train_cfg.validate(dataset.size());
  loss_cfg.validate();
  model_cfg.validate();

  TrainResult result{model::init_params(model_cfg, train_cfg.seed), {}};
  AdamState state;
  std::uint64_t step = 0;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    if (train_cfg.shuffle) {
      std::mt19937_64 gen(ad::mix64(train_cfg.seed ^ (static_cast<std::uint64_t>(epoch) << 32)));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[gen() % i]);
    }
    double loss_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + train_cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const model::ImageBatch batch = model::make_batch(dataset, idx);
      std::vector<double> labels;
      for (std::size_t i : idx) labels.push_back(dataset[i].label);
      const ad::Tensor target = ad::Tensor::from({idx.size(), 1}, std::move(labels));

      ++step;
      result.params.zero_grad();
      const ad::Tensor pred =
          model::forward(result.params, model_cfg, batch.hor, batch.ver, true,
                         ad::mix64(train_cfg.seed) ^ step);
      const ad::Tensor l = loss(loss_cfg, pred, target);
      const double value = l.item();
      if (!std::isfinite(value))
        throw Error(ErrorCode::DivergedLoss,
                    "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                        std::to_string(step));
      ad::backward(l);
      adam_step(result.params.tensors(), state, train_cfg, step);
      loss_total += value * static_cast<double>(idx.size());
    }
    EpochRecord rec{epoch, loss_total / static_cast<double>(dataset.size()), std::nullopt};
    if (!validation.empty()) rec.val_mae = mae(predictions(result.params, model_cfg, validation));
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.params.zero_grad();
  return result;
}

}  // namespace mcsformer::train

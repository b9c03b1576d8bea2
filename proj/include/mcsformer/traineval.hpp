#pragma once

// Losses, Adam, the training loop and RUL evaluation metrics.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcsformer/features.hpp"
#include "mcsformer/model.hpp"
#include "mcsformer/tensor.hpp"

namespace mcsformer::train {

enum class LossKind { Mse, Custom };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::Custom;
  double lambda = 1.0;  // weight of the late-prediction hinge; ignored for Mse

  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  int epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  static TrainConfig paper() { return TrainConfig{}; }
  /// Short schedule for desk-scale runs: 30 epochs at lr 3e-4.
  static TrainConfig desk();

  void validate(std::size_t dataset_size) const;
};

struct PredictionBatch {
  std::vector<double> preds;
  std::vector<double> targets;

  /// preds - targets; positive means a late prediction.
  std::vector<double> errors() const;
  /// Throws EmptyBatch / LengthMismatch / InvalidConfig (target outside [0,1]).
  void validate() const;
};

/// mean over samples of (pred - y)^2 + lambda * max(0, pred - y).
double custom_loss(const PredictionBatch& batch, double lambda);
double mse_loss(const PredictionBatch& batch);

/// Differentiable forms over [N,1] tensors; the hinge has subgradient 0 at
/// pred == y.
ad::Tensor custom_loss(const ad::Tensor& pred, const ad::Tensor& target, double lambda);
ad::Tensor mse_loss(const ad::Tensor& pred, const ad::Tensor& target);
ad::Tensor loss(const LossConfig& cfg, const ad::Tensor& pred, const ad::Tensor& target);

double mae(const PredictionBatch& batch);

enum class Aggregation { Sum, Mean };

/// exp(-e/15) - 1 for e < 0 (early), exp(e/5) - 1 for e >= 0 (late).
double score_term(double error);
double score(const PredictionBatch& batch, Aggregation aggregation = Aggregation::Mean);

/// Fraction of samples with pred > target.
double late_fraction(const PredictionBatch& batch);

struct Metrics {
  double mae = 0.0;
  double score_sum = 0.0;
  double score_mean = 0.0;
  double late_fraction = 0.0;
  std::size_t count = 0;
};

Metrics evaluate(const PredictionBatch& batch);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update of theta in place (t >= 1).
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const TrainConfig& cfg, std::uint64_t t);

/// Adam over a parameter list; tensors that received no gradient are
/// treated as having zero gradient.
void adam_step(std::vector<ad::Tensor>& params, AdamState& state, const TrainConfig& cfg,
               std::uint64_t t);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_mae;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded training: parameters initialized from cfg.seed, per-epoch
/// Fisher-Yates shuffling, dropout keys derived from (seed, step).
/// Throws EmptyDataset, or DivergedLoss on a non-finite batch loss.
TrainResult train(const std::vector<features::LabeledSample>& dataset,
                  const model::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const LossConfig& loss_cfg,
                  const std::vector<features::LabeledSample>& validation = {},
                  const EpochCallback& on_epoch = {});

/// Predictions paired with sample labels.
PredictionBatch predictions(const model::ModelParams& params, const model::ModelConfig& cfg,
                            const std::vector<features::LabeledSample>& samples);

}  // namespace mcsformer::train

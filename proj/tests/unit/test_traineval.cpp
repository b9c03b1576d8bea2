#include "doctest.h"

#include <cmath>
#include <limits>

#include "support/gradcheck.hpp"
#include "mcsformer/error.hpp"
#include "mcsformer/random.hpp"
#include "mcsformer/traineval.hpp"

using namespace mcsformer;
using namespace mcsformer::train;
using ad::Tensor;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mcsformer::Error");
  return ErrorCode::UsageError;
}

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.image_side = 16;
  cfg.conv_channels = 4;
  cfg.embed_dim_base = 4;
  cfg.depths = {1, 1, 1, 1};
  cfg.heads = {1, 1, 2, 2};
  cfg.window_size = 2;
  cfg.mlp_ratio = 2.0;
  cfg.dropout_p = 0.0;
  cfg.head_hidden = {8, 4};
  cfg.preset = model::Preset::Custom;
  return cfg;
}

/// Images whose brightness encodes the label, so a small model can fit them.
std::vector<features::LabeledSample> toy_dataset(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<features::LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    features::LabeledSample s;
    s.label = static_cast<float>(static_cast<double>(i) / static_cast<double>(n - 1));
    s.hor.side = s.ver.side = 16;
    for (int p = 0; p < 256; ++p) {
      s.hor.pixels.push_back(static_cast<float>(0.5 * s.label + 0.5 * rng.uniform()));
      s.ver.pixels.push_back(static_cast<float>(rng.uniform()));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("custom loss examples") {
  CHECK(custom_loss(PredictionBatch{{0.8}, {0.5}}, 1.0) == doctest::Approx(0.39).epsilon(1e-12));
  CHECK(custom_loss(PredictionBatch{{0.2}, {0.5}}, 1.0) == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(custom_loss(PredictionBatch{{0.8, 0.2}, {0.5, 0.5}}, 1.0) ==
        doctest::Approx(0.24).epsilon(1e-12));
  CHECK(custom_loss(PredictionBatch{{0.5}, {0.5}}, 3.0) == 0.0);
  const PredictionBatch b{{0.1, 0.9, 0.4}, {0.3, 0.2, 0.4}};
  CHECK(custom_loss(b, 0.0) == mse_loss(b));
  CHECK(custom_loss(b, 2.0) > custom_loss(b, 1.0));
}

TEST_CASE("score and metric examples") {
  CHECK(score_term(0.0) == 0.0);
  CHECK(score_term(0.15) == doctest::Approx(0.030455).epsilon(1e-5));
  CHECK(std::abs(score_term(0.15) - 0.030455) < 1e-6);
  CHECK(std::abs(score_term(-0.15) - 0.010050) < 1e-6);
  CHECK(score_term(0.3) > score_term(-0.3));  // late errors cost more

  const PredictionBatch b{{0.5, 0.65, 0.35}, {0.5, 0.5, 0.5}};
  CHECK(score(b, Aggregation::Sum) == doctest::Approx(score_term(0.15) + score_term(-0.15)));
  CHECK(score(b) == doctest::Approx(score(b, Aggregation::Sum) / 3.0));
  CHECK(mae(b) == doctest::Approx(0.1));
  CHECK(late_fraction(b) == doctest::Approx(1.0 / 3.0));
  const Metrics m = evaluate(b);
  CHECK(m.count == 3);
  CHECK(m.mae == doctest::Approx(0.1));
  CHECK(m.late_fraction == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("prediction batches are validated") {
  CHECK(code_of([] { mae(PredictionBatch{}); }) == ErrorCode::EmptyBatch);
  CHECK(code_of([] { mae(PredictionBatch{{0.1, 0.2}, {0.1}}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([] { mae(PredictionBatch{{0.1}, {1.5}}); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { custom_loss(PredictionBatch{{0.1}, {0.1}}, -1.0); }) ==
        ErrorCode::InvalidConfig);
  CHECK(code_of([] { loss_kind_from_string("huber"); }) == ErrorCode::InvalidConfig);
  CHECK(loss_kind_from_string(to_string(LossKind::Mse)) == LossKind::Mse);
  CHECK(loss_kind_from_string(to_string(LossKind::Custom)) == LossKind::Custom);
}

TEST_CASE("differentiable losses agree with the scalar forms") {
  const PredictionBatch b{{0.1, 0.9, 0.4, 0.7}, {0.3, 0.2, 0.4, 0.1}};
  const Tensor pred = Tensor::from({4, 1}, b.preds), target = Tensor::from({4, 1}, b.targets);
  CHECK(custom_loss(pred, target, 1.5).item() == doctest::Approx(custom_loss(b, 1.5)));
  CHECK(mse_loss(pred, target).item() == doctest::Approx(mse_loss(b)));
  CHECK(loss(LossConfig{LossKind::Mse, 5.0}, pred, target).item() ==
        doctest::Approx(mse_loss(b)));

  // Gradient: (2e + lambda * [e > 0]) / N, and the hinge contributes 0 at e == 0.
  Tensor p = Tensor::from({4, 1}, b.preds, true);
  ad::backward(custom_loss(p, target, 1.0));
  const auto g = p.grad();
  CHECK(g[0] == doctest::Approx(2 * -0.2 / 4));
  CHECK(g[1] == doctest::Approx((2 * 0.7 + 1.0) / 4));
  CHECK(g[2] == 0.0);
  CHECK(g[3] == doctest::Approx((2 * 0.6 + 1.0) / 4));

  const Tensor q = Tensor::from({4, 1}, {0.15, 0.95, 0.45, 0.65}, true);
  const auto r = testing::gradcheck(
      [&](const std::vector<Tensor>& in) { return custom_loss(in[0], target, 0.7); }, {q});
  CHECK(r.max_rel_error < 1e-6);
  CHECK(code_of([] { custom_loss(Tensor::zeros({0, 1}), Tensor::zeros({0, 1}), 1.0); }) ==
        ErrorCode::EmptyBatch);
}

TEST_CASE("Adam update matches hand-computed steps") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  std::vector<double> theta{1.0}, m{0.0}, v{0.0};
  adam_update(theta, std::vector<double>{0.5}, m, v, cfg, 1);
  // First bias-corrected step is lr * g / (|g| + eps).
  CHECK(theta[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  const double theta1 = theta[0];
  adam_update(theta, std::vector<double>{-0.25}, m, v, cfg, 2);
  const double m2 = 0.9 * 0.05 + 0.1 * -0.25;
  const double v2 = 0.999 * 0.001 * 0.25 + 0.001 * 0.0625;
  const double step = 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(theta[0] == doctest::Approx(theta1 - step).epsilon(1e-12));

  CHECK(code_of([&] { adam_update(theta, std::vector<double>{1.0}, m, v, cfg, 0); }) ==
        ErrorCode::InvalidConfig);
  std::vector<double> small;
  CHECK(code_of([&] { adam_update(theta, std::vector<double>{1.0}, small, v, cfg, 1); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("Adam minimizes a quadratic and ignores absent gradients") {
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  std::vector<Tensor> params{Tensor::from({2}, {3.0, -2.0}, true), Tensor::from({1}, {7.0}, true)};
  AdamState state;
  for (std::uint64_t t = 1; t <= 400; ++t) {
    for (auto& p : params) p.zero_grad();
    const Tensor target = Tensor::from({2}, {1.0, 0.5});
    const Tensor d = ad::sub(params[0], target);
    ad::backward(ad::sum(ad::mul(d, d)));
    adam_step(params, state, cfg, t);
  }
  CHECK(params[0].data()[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(params[0].data()[1] == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(params[1].data()[0] == 7.0);
}

TEST_CASE("training configurations") {
  const TrainConfig full = TrainConfig::paper();
  CHECK(full.learning_rate == 1e-4);
  CHECK(full.batch_size == 16);
  const TrainConfig desk = TrainConfig::desk();
  CHECK(desk.epochs == 30);
  CHECK(desk.batch_size == 16);
  CHECK(code_of([&] { desk.validate(8); }) == ErrorCode::InvalidConfig);
  TrainConfig bad = desk;
  bad.learning_rate = 0.0;
  CHECK(code_of([&] { bad.validate(100); }) == ErrorCode::InvalidConfig);
  bad = desk;
  bad.beta2 = 1.0;
  CHECK(code_of([&] { bad.validate(100); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("training is seeded, reports history and reduces the loss") {
  const auto data = toy_dataset(16, 3);
  const auto val = toy_dataset(4, 4);
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 4;
  cfg.epochs = 25;
  cfg.seed = 11;
  int calls = 0;
  const TrainResult a =
      train::train(data, tiny_config(), cfg, LossConfig{LossKind::Mse, 0.0}, val,
            [&](const EpochRecord& r) { CHECK(r.epoch == ++calls); });
  CHECK(calls == 25);
  REQUIRE(a.history.size() == 25);
  CHECK(a.history.back().val_mae.has_value());
  CHECK(a.history.back().train_loss < 0.5 * a.history.front().train_loss);

  const TrainResult b = train::train(data, tiny_config(), cfg, LossConfig{LossKind::Mse, 0.0}, val);
  for (std::size_t i = 0; i < a.params.tensors().size(); ++i) {
    const auto x = a.params.tensors()[i].data(), y = b.params.tensors()[i].data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
  CHECK(a.history.back().train_loss == b.history.back().train_loss);
}

TEST_CASE("training failures are typed") {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  CHECK(code_of([&] { train::train({}, tiny_config(), cfg, LossConfig{}); }) == ErrorCode::EmptyDataset);
  auto data = toy_dataset(4, 1);
  data[1].label = std::numeric_limits<float>::quiet_NaN();
  CHECK(code_of([&] { train::train(data, tiny_config(), cfg, LossConfig{}); }) ==
        ErrorCode::DivergedLoss);
}

#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "mcsformer/dataio.hpp"
#include "mcsformer/error.hpp"
#include "mcsformer/features.hpp"
#include "mcsformer/model.hpp"
#include "mcsformer/tensor.hpp"
#include "mcsformer/traineval.hpp"
#include "svg.hpp"

#ifndef MCSFORMER_VERSION
#define MCSFORMER_VERSION "0.0.0"
#endif

namespace mcsformer::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Flag tables

struct FlagSpec {
  std::string name;
  json def;          // default under the full-size preset; its JSON type is the flag's type
  std::string help;
  json desk = nullptr;  // default under the desk preset, if different
  bool required = false;
  bool path = false;  // recorded as an absolute path so manifests replay from anywhere
};

struct Context;
using Handler = std::function<void(const json& cfg, Context& ctx)>;

struct CommandSpec {
  std::string name;
  std::string help;
  std::string default_preset;  // empty when the command has no --preset flag
  std::vector<FlagSpec> flags;
  Handler handler;
};

std::vector<FlagSpec> fpt_flags() {
  return {{"channel", "horizontal", "Channel for FPT detection: horizontal, vertical or either"},
          {"baseline", 0, "Healthy baseline length in snapshots (0: min(40, 20% of record), >= 4)"},
          {"run", 3, "Consecutive out-of-band kurtosis values required"},
          {"sigma", 3.0, "Half-width of the healthy band in baseline standard deviations"}};
}

std::vector<FlagSpec> feature_flags() {
  return {{"window", 10, "Snapshots per sliding window"},
          {"stride", 5, "Window stride in snapshots"},
          {"level", 3, "Wavelet packet decomposition level"},
          {"image-side", 64, "WPD image side in pixels"},
          {"denoise", true, "Wavelet shrinkage + Savitzky-Golay before imaging"},
          {"denoise-levels", 2, "DWT levels used for shrinkage"},
          {"savgol-window", 5, "Savitzky-Golay window length"},
          {"savgol-order", 2, "Savitzky-Golay polynomial order"}};
}

std::vector<FlagSpec> train_flags() {
  return {{"preset", "paper", "Model size: paper (C=96, 64x64 images) or desk (C=16, 32x32 images)"},
          {"lr", 1e-4, "Adam learning rate", 3e-4},
          {"batch", 16, "Mini-batch size"},
          {"epochs", 100, "Training epochs", 30},
          {"dropout", 0.3, "Dropout probability in the regression head", 0.1},
          {"loss", "custom", "Loss: custom (MSE + lambda * late hinge) or mse"},
          {"lambda", 1.0, "Weight of the late-prediction hinge in the custom loss"},
          {"beta1", 0.9, "Adam beta1"},
          {"beta2", 0.999, "Adam beta2"},
          {"eps", 1e-8, "Adam epsilon"},
          {"seed", 0, "Seed for initialization, shuffling and dropout"}};
}

// ---------------------------------------------------------------------------
// Outputs with cleanup on failure

class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_, ec);
      if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir_.string() + ": " + ec.message());
      created_dir_ = true;
    } else if (!fs::is_directory(dir_)) {
      throw Error(ErrorCode::IoError, dir_.string() + " exists and is not a directory");
    }
  }
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;

  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

  /// Registers an artifact before it is written so a failure removes it.
  fs::path file(const std::string& name) {
    const fs::path p = dir_ / name;
    if (std::find(files_.begin(), files_.end(), p) == files_.end()) files_.push_back(p);
    return p;
  }

  void write_text(const std::string& name, const std::string& text) {
    const fs::path p = file(name);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
    out << text;
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + p.string());
  }

  void commit() { committed_ = true; }
  const fs::path& dir() const { return dir_; }
  const std::vector<fs::path>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_dir_ = false;
  bool committed_ = false;
};

struct Context {
  Outputs& outputs;
  std::ostream& log;
  std::vector<std::string> inputs;
  std::map<std::string, double> timings;

  template <class F>
  auto timed(const std::string& phase, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Stop {
      Context& c;
      std::string phase;
      std::chrono::steady_clock::time_point t0;
      ~Stop() {
        c.timings[phase] +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    } stop{*this, phase, t0};
    return f();
  }

  fs::path input(const json& cfg, const std::string& key) {
    const std::string p = cfg.at(key).get<std::string>();
    inputs.push_back(p);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Formatting helpers

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fnv1a_hex(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json metrics_json(const train::Metrics& m) {
  return json{{"mae", m.mae},
              {"score_sum", m.score_sum},
              {"score_mean", m.score_mean},
              {"late_fraction", m.late_fraction},
              {"count", m.count}};
}

template <class T>
T get(const json& cfg, const std::string& key) {
  return cfg.at(key).get<T>();
}

std::size_t get_size(const json& cfg, const std::string& key) {
  const auto v = cfg.at(key).get<long long>();
  if (v < 0) throw Error(ErrorCode::InvalidConfig, "--" + key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

features::ChannelPolicy channel_policy(const std::string& s) {
  if (s == "horizontal") return features::ChannelPolicy::Horizontal;
  if (s == "vertical") return features::ChannelPolicy::Vertical;
  if (s == "either") return features::ChannelPolicy::Either;
  throw Error(ErrorCode::InvalidConfig, "unknown channel '" + s + "'");
}

features::FptConfig fpt_config(const json& cfg, std::size_t record_length) {
  features::FptConfig fc = features::FptConfig::for_record(record_length);
  if (get<long long>(cfg, "baseline") > 0) fc.baseline_count = get_size(cfg, "baseline");
  fc.consecutive_required = get_size(cfg, "run");
  fc.sigma_multiplier = get<double>(cfg, "sigma");
  fc.channel_policy = channel_policy(get<std::string>(cfg, "channel"));
  if (fc.consecutive_required < 1 || !(fc.sigma_multiplier > 0.0))
    throw Error(ErrorCode::InvalidConfig, "--run must be >= 1 and --sigma > 0");
  return fc;
}

features::FeatureConfig feature_config(const json& cfg) {
  features::FeatureConfig fc;
  fc.window = get_size(cfg, "window");
  fc.stride = get_size(cfg, "stride");
  fc.wpd_level = get<int>(cfg, "level");
  fc.image_side = get<int>(cfg, "image-side");
  fc.denoise = get<bool>(cfg, "denoise");
  fc.denoise_levels = get<int>(cfg, "denoise-levels");
  fc.savgol_window = get<int>(cfg, "savgol-window");
  fc.savgol_order = get<int>(cfg, "savgol-order");
  return fc;
}

model::ModelConfig model_config(const json& cfg) {
  const auto preset = model::preset_from_string(get<std::string>(cfg, "preset"));
  if (preset == model::Preset::Custom)
    throw Error(ErrorCode::InvalidConfig, "--preset must be paper or desk");
  model::ModelConfig mc =
      preset == model::Preset::Desk ? model::ModelConfig::desk() : model::ModelConfig::paper();
  mc.dropout_p = get<double>(cfg, "dropout");
  mc.validate();
  return mc;
}

train::TrainConfig train_config(const json& cfg) {
  train::TrainConfig tc;
  tc.learning_rate = get<double>(cfg, "lr");
  const auto batch = get<long long>(cfg, "batch");
  if (batch < 1) throw Error(ErrorCode::InvalidConfig, "--batch must be >= 1");
  tc.batch_size = static_cast<std::size_t>(batch);
  tc.epochs = get<int>(cfg, "epochs");
  tc.beta1 = get<double>(cfg, "beta1");
  tc.beta2 = get<double>(cfg, "beta2");
  tc.eps = get<double>(cfg, "eps");
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  return tc;
}

train::LossConfig loss_config(const json& cfg) {
  train::LossConfig lc{train::loss_kind_from_string(get<std::string>(cfg, "loss")),
                       get<double>(cfg, "lambda")};
  lc.validate();
  return lc;
}

std::string history_csv(const std::vector<train::EpochRecord>& history) {
  std::string csv = "epoch,loss,val_mae\n";
  for (const auto& r : history)
    csv += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," +
           (r.val_mae ? fmt(*r.val_mae) : std::string()) + "\n";
  return csv;
}

train::TrainResult train_logged(const std::vector<features::LabeledSample>& data,
                                const model::ModelConfig& mc, const train::TrainConfig& tc,
                                const train::LossConfig& lc,
                                const std::vector<features::LabeledSample>& val,
                                std::ostream& log, const std::string& tag) {
  return train::train(data, mc, tc, lc, val, [&](const train::EpochRecord& r) {
    log << tag << "epoch " << r.epoch << "/" << tc.epochs << " loss " << r.train_loss;
    if (r.val_mae) log << " val_mae " << *r.val_mae;
    log << "\n";
  });
}

void check_image_side(const model::ModelConfig& mc,
                      const std::vector<features::LabeledSample>& samples) {
  if (!samples.empty() && samples.front().hor.side != mc.image_side)
    throw Error(ErrorCode::ConfigMismatch,
                "dataset images are " + std::to_string(samples.front().hor.side) +
                    " px but the model expects " + std::to_string(mc.image_side) +
                    " px (featurize with --image-side " + std::to_string(mc.image_side) + ")");
}

// ---------------------------------------------------------------------------
// Commands

void cmd_synth(const json& cfg, Context& ctx) {
  io::SyntheticConfig sc;
  sc.n_snapshots = get_size(cfg, "snapshots");
  sc.samples_per_snapshot = get_size(cfg, "samples");
  sc.fault_onset_index = get_size(cfg, "onset");
  sc.fault_growth_rate = get<double>(cfg, "growth");
  sc.noise_std = get<double>(cfg, "noise");
  sc.healthy_kurtosis_level = get<double>(cfg, "healthy-kurtosis");
  sc.sample_rate_hz = get<double>(cfg, "sample-rate");
  sc.seed = cfg.at("seed").get<std::uint64_t>();
  sc.bearing_id = get<std::string>(cfg, "bearing-id");
  sc.condition_id = get<int>(cfg, "condition");
  const auto record = ctx.timed("generate", [&] { return io::gen_synthetic(sc); });
  io::save_record(ctx.outputs.file("record.rec"), record);
  ctx.log << "wrote " << record.size() << " snapshots x " << record.samples_per_snapshot()
          << " samples to " << (ctx.outputs.dir() / "record.rec").string() << "\n";
}

void cmd_ingest(const json& cfg, Context& ctx) {
  io::PronostiaLayout layout;
  layout.horizontal_column = get_size(cfg, "h-col");
  layout.vertical_column = get_size(cfg, "v-col");
  layout.sample_rate_hz = get<double>(cfg, "sample-rate");
  const fs::path dir = ctx.input(cfg, "input");
  const auto record = ctx.timed("parse", [&] { return io::load_pronostia_bearing(dir, layout); });
  io::save_record(ctx.outputs.file("record.rec"), record);
  ctx.log << "ingested " << record.bearing_id << ": " << record.size() << " snapshots x "
          << record.samples_per_snapshot() << " samples\n";
}

void cmd_fpt(const json& cfg, Context& ctx) {
  const auto record = io::load_record(ctx.input(cfg, "record"));
  const features::FptConfig fc = fpt_config(cfg, record.size());
  const auto kh = features::kurtosis_series(record, features::Channel::Horizontal);
  const auto kv = features::kurtosis_series(record, features::Channel::Vertical);
  const auto fpt = features::detect_fpt(record, fc);

  const auto& primary = fc.channel_policy == features::ChannelPolicy::Vertical ? kv : kh;
  const std::size_t b = std::min(fc.baseline_count, primary.size());
  double mu = 0.0, var = 0.0;
  for (std::size_t i = 0; i < b; ++i) mu += primary[i] / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) var += (primary[i] - mu) * (primary[i] - mu);
  const double sigma = b > 1 ? std::sqrt(var / static_cast<double>(b - 1)) : 0.0;
  const double lo = mu - fc.sigma_multiplier * sigma, hi = mu + fc.sigma_multiplier * sigma;

  json report{{"bearing_id", record.bearing_id},
              {"snapshots", record.size()},
              {"fpt", fpt ? json(*fpt) : json(nullptr)},
              {"channel", get<std::string>(cfg, "channel")},
              {"baseline_count", fc.baseline_count},
              {"consecutive_required", fc.consecutive_required},
              {"sigma_multiplier", fc.sigma_multiplier},
              {"baseline_mean", mu},
              {"baseline_std", sigma},
              {"band", {lo, hi}}};
  ctx.outputs.write_text("fpt.json", report.dump(2) + "\n");

  std::string csv = "snapshot,kurtosis_horizontal,kurtosis_vertical\n";
  Series sh{"horizontal", {}, {}, "#1f77b4"}, sv{"vertical", {}, {}, "#ff7f0e"};
  for (std::size_t i = 0; i < kh.size(); ++i) {
    csv += std::to_string(i) + "," + fmt(kh[i]) + "," + fmt(kv[i]) + "\n";
    sh.x.push_back(static_cast<double>(i));
    sh.y.push_back(kh[i]);
    sv.x.push_back(static_cast<double>(i));
    sv.y.push_back(kv[i]);
  }
  ctx.outputs.write_text("kurtosis.csv", csv);
  const double n = static_cast<double>(kh.size() - 1);
  Chart chart{"Kurtosis per snapshot", "snapshot", "kurtosis",
              {sh, sv, Series{"healthy band", {0, n, n, 0, 0}, {lo, lo, hi, hi, lo}, "#2ca02c"}}};
  if (fpt) {
    const double ymax = std::max(*std::max_element(kh.begin(), kh.end()),
                                 *std::max_element(kv.begin(), kv.end()));
    chart.series.push_back(Series{"FPT", {static_cast<double>(*fpt), static_cast<double>(*fpt)},
                                  {0.0, ymax}, "#d62728"});
  }
  ctx.outputs.write_text("kurtosis.svg", render_svg(chart));
  ctx.log << "fpt: " << (fpt ? std::to_string(*fpt) : std::string("none")) << "\n";
}

void cmd_featurize(const json& cfg, Context& ctx) {
  const auto records = cfg.at("record").get<std::vector<std::string>>();
  if (records.empty()) throw Error(ErrorCode::UsageError, "--record is required");
  const long long fixed_fpt = get<long long>(cfg, "fpt");
  if (fixed_fpt >= 0 && records.size() != 1)
    throw Error(ErrorCode::UsageError, "--fpt can only be given with a single --record");
  const features::FeatureConfig fc = feature_config(cfg);

  std::vector<features::LabeledSample> samples;
  json ids = json::array(), fpts = json::array();
  for (const auto& path : records) {
    ctx.inputs.push_back(path);
    const auto record = io::load_record(path);
    std::size_t fpt = 0;
    if (fixed_fpt >= 0) {
      fpt = static_cast<std::size_t>(fixed_fpt);
    } else {
      const auto detected = features::detect_fpt(record, fpt_config(cfg, record.size()));
      if (!detected)
        throw Error(ErrorCode::NoFptDetected,
                    record.bearing_id + ": no first prediction time; pass --fpt explicitly");
      fpt = *detected;
    }
    auto part = ctx.timed("featurize", [&] { return features::build_dataset(record, fpt, fc); });
    ctx.log << record.bearing_id << ": fpt " << fpt << ", " << part.size() << " samples\n";
    samples.insert(samples.end(), std::make_move_iterator(part.begin()),
                   std::make_move_iterator(part.end()));
    ids.push_back(record.bearing_id);
    fpts.push_back(fpt);
  }
  const fs::path ds = ctx.outputs.file("dataset.ds");
  ctx.outputs.file(io::sidecar_path(ds).filename().string());
  io::save_dataset(ds, samples,
                   json{{"bearing_ids", ids}, {"fpt", fpts}, {"features", io::to_json(fc)}});
}

void cmd_train(const json& cfg, Context& ctx) {
  const auto data = io::load_dataset(ctx.input(cfg, "dataset")).samples;
  std::vector<features::LabeledSample> val;
  if (!get<std::string>(cfg, "val-dataset").empty())
    val = io::load_dataset(ctx.input(cfg, "val-dataset")).samples;
  const model::ModelConfig mc = model_config(cfg);
  const train::TrainConfig tc = train_config(cfg);
  const train::LossConfig lc = loss_config(cfg);
  check_image_side(mc, data);
  check_image_side(mc, val);

  const auto result =
      ctx.timed("train", [&] { return train_logged(data, mc, tc, lc, val, ctx.log, ""); });
  const json extra{{"train", io::to_json(tc)},
                   {"loss", train::to_string(lc.kind)},
                   {"lambda", lc.lambda},
                   {"final_train_loss", result.history.empty() ? 0.0 : result.history.back().train_loss}};
  io::save_checkpoint(ctx.outputs.file("model.ckpt"), mc, result.params, extra);
  ctx.outputs.write_text("history.csv", history_csv(result.history));
  Series loss{"train loss", {}, {}, "#1f77b4"}, vmae{"val MAE", {}, {}, "#ff7f0e"};
  for (const auto& r : result.history) {
    loss.x.push_back(r.epoch);
    loss.y.push_back(r.train_loss);
    if (r.val_mae) {
      vmae.x.push_back(r.epoch);
      vmae.y.push_back(*r.val_mae);
    }
  }
  Chart chart{"Training history", "epoch", "value", {loss}};
  if (!vmae.x.empty()) chart.series.push_back(vmae);
  ctx.outputs.write_text("history.svg", render_svg(chart));
}

std::pair<io::Checkpoint, std::vector<features::LabeledSample>> load_model_and_data(
    const json& cfg, Context& ctx) {
  auto ck = io::load_checkpoint(ctx.input(cfg, "checkpoint"));
  auto data = io::load_dataset(ctx.input(cfg, "dataset")).samples;
  check_image_side(ck.config, data);
  return {std::move(ck), std::move(data)};
}

void cmd_eval(const json& cfg, Context& ctx) {
  const auto [ck, data] = load_model_and_data(cfg, ctx);
  const auto batch = ctx.timed("predict", [&] { return train::predictions(ck.params, ck.config, data); });
  const auto m = train::evaluate(batch);
  ctx.outputs.write_text("metrics.json", metrics_json(m).dump(2) + "\n");
  ctx.log << "mae " << m.mae << " score_mean " << m.score_mean << " score_sum " << m.score_sum
          << " late_fraction " << m.late_fraction << " (" << m.count << " samples)\n";
}

void cmd_predict(const json& cfg, Context& ctx) {
  const auto [ck, data] = load_model_and_data(cfg, ctx);
  const auto batch = ctx.timed("predict", [&] { return train::predictions(ck.params, ck.config, data); });
  std::string csv = "window_index,true_rul,pred_rul,error\n";
  Series truth{"true RUL", {}, {}, "#2ca02c"}, pred{"predicted RUL", {}, {}, "#1f77b4", true};
  for (std::size_t i = 0; i < batch.preds.size(); ++i) {
    csv += std::to_string(i) + "," + fmt(batch.targets[i]) + "," + fmt(batch.preds[i]) + "," +
           fmt(batch.preds[i] - batch.targets[i]) + "\n";
    truth.x.push_back(static_cast<double>(i));
    truth.y.push_back(batch.targets[i]);
    pred.x.push_back(static_cast<double>(i));
    pred.y.push_back(batch.preds[i]);
  }
  ctx.outputs.write_text("predictions.csv", csv);
  ctx.outputs.write_text("predictions.svg",
                         render_svg(Chart{"Predicted vs. true RUL", "window index",
                                          "normalized RUL", {truth, pred}}));
  ctx.log << "wrote " << batch.preds.size() << " predictions\n";
}

void cmd_exp_loss(const json& cfg, Context& ctx) {
  const model::ModelConfig mc = model_config(cfg);
  train::TrainConfig tc = train_config(cfg);
  const double lambda = get<double>(cfg, "lambda");
  const std::uint64_t seed = tc.seed;
  features::FeatureConfig fc;
  fc.window = get_size(cfg, "window");
  fc.stride = get_size(cfg, "stride");
  fc.wpd_level = get<int>(cfg, "level");
  fc.image_side = mc.image_side;
  const std::size_t wanted = get_size(cfg, "train-samples");
  if (wanted < tc.batch_size)
    throw Error(ErrorCode::InvalidConfig, "--train-samples must be at least --batch");

  auto bearing = [&](std::uint64_t index, const std::string& id) {
    io::SyntheticConfig sc;
    sc.n_snapshots = get_size(cfg, "snapshots");
    sc.fault_onset_index = get_size(cfg, "onset");
    sc.seed = seed * 1000 + index;
    sc.bearing_id = id;
    const auto record = io::gen_synthetic(sc);
    const auto fpt = features::detect_fpt(record, features::FptConfig::for_record(record.size()));
    if (!fpt) throw Error(ErrorCode::NoFptDetected, id + ": no first prediction time");
    return features::build_dataset(record, *fpt, fc);
  };

  std::vector<features::LabeledSample> train_set, test_set;
  ctx.timed("featurize", [&] {
    for (std::uint64_t b = 1; train_set.size() < wanted; ++b) {
      if (b > 1000) throw Error(ErrorCode::EmptyDataset, "could not collect enough training windows");
      auto part = bearing(b, "Synthetic_" + std::to_string(b));
      train_set.insert(train_set.end(), part.begin(), part.end());
    }
    train_set.resize(wanted);
    test_set = bearing(999, "Synthetic_heldout");
    return 0;
  });
  ctx.log << train_set.size() << " training and " << test_set.size() << " held-out samples\n";

  json report{{"lambda", lambda},
              {"seed", seed},
              {"train_samples", train_set.size()},
              {"test_samples", test_set.size()}};
  std::map<std::string, train::PredictionBatch> preds;
  std::map<std::string, std::vector<train::EpochRecord>> histories;
  for (const auto& [name, lc] : {std::pair{std::string("mse"), train::LossConfig{train::LossKind::Mse, 0.0}},
                                 std::pair{std::string("custom"), train::LossConfig{train::LossKind::Custom, lambda}}}) {
    const auto result = ctx.timed("train_" + name, [&] {
      return train_logged(train_set, mc, tc, lc, {}, ctx.log, "[" + name + "] ");
    });
    preds[name] = train::predictions(result.params, mc, test_set);
    histories[name] = result.history;
    report[name] = metrics_json(train::evaluate(preds[name]));
    report[name]["final_train_loss"] = result.history.back().train_loss;
  }
  json delta;
  for (const char* key : {"mae", "score_sum", "score_mean", "late_fraction"})
    delta[key] = report["custom"][key].get<double>() - report["mse"][key].get<double>();
  report["delta_custom_minus_mse"] = delta;
  report["late_fraction_not_worse"] =
      report["custom"]["late_fraction"].get<double>() <= report["mse"]["late_fraction"].get<double>();
  ctx.outputs.write_text("exp_loss.json", report.dump(2) + "\n");

  std::string csv = "window_index,true_rul,pred_mse,pred_custom\n";
  Series truth{"true RUL", {}, {}, "#2ca02c"}, pm{"MSE", {}, {}, "#1f77b4", true},
      pc{"custom loss", {}, {}, "#d62728", true};
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const double x = static_cast<double>(i);
    csv += std::to_string(i) + "," + fmt(preds["mse"].targets[i]) + "," + fmt(preds["mse"].preds[i]) +
           "," + fmt(preds["custom"].preds[i]) + "\n";
    truth.x.push_back(x);
    truth.y.push_back(preds["mse"].targets[i]);
    pm.x.push_back(x);
    pm.y.push_back(preds["mse"].preds[i]);
    pc.x.push_back(x);
    pc.y.push_back(preds["custom"].preds[i]);
  }
  ctx.outputs.write_text("exp_loss_predictions.csv", csv);
  ctx.outputs.write_text("exp_loss.svg",
                         render_svg(Chart{"Held-out RUL: MSE vs. custom loss", "window index",
                                          "normalized RUL", {truth, pm, pc}}));
  ctx.outputs.write_text("history_mse.csv", history_csv(histories["mse"]));
  ctx.outputs.write_text("history_custom.csv", history_csv(histories["custom"]));
  ctx.log << "late_fraction mse " << report["mse"]["late_fraction"] << " custom "
          << report["custom"]["late_fraction"] << "\n";
}

std::vector<CommandSpec> command_table() {
  std::vector<CommandSpec> t;
  t.push_back({"synth", "Generate a synthetic run-to-failure bearing record", "",
               {{"snapshots", 100, "Number of snapshots"},
                {"samples", 2560, "Samples per snapshot"},
                {"onset", 50, "Snapshot index where the fault starts"},
                {"growth", 3.0, "Impact amplitude growth per snapshot, in noise units"},
                {"noise", 1.0, "Noise standard deviation"},
                {"healthy-kurtosis", 3.0, "Kurtosis of healthy snapshots (>= 3)"},
                {"sample-rate", 25600.0, "Sampling rate in Hz"},
                {"seed", 0, "Generator seed"},
                {"bearing-id", "Synthetic_1", "Bearing identifier stored in the record"},
                {"condition", 1, "Operating condition id"}},
               cmd_synth});
  t.push_back({"ingest", "Convert a PRONOSTIA bearing directory (acc_*.csv) to a record", "",
               {{"input", "", "Bearing directory, e.g. Learning_set/Bearing1_1", nullptr, true, true},
                {"h-col", 4, "Zero-based column of the horizontal acceleration"},
                {"v-col", 5, "Zero-based column of the vertical acceleration"},
                {"sample-rate", 25600.0, "Sampling rate in Hz"}},
               cmd_ingest});
  {
    std::vector<FlagSpec> f{{"record", "", "Record file", nullptr, true, true}};
    for (auto& x : fpt_flags()) f.push_back(x);
    t.push_back({"fpt", "Kurtosis series and first prediction time of a record", "", f, cmd_fpt});
  }
  {
    std::vector<FlagSpec> f{{"record", json::array(), "Record file (repeatable)", nullptr, true, true},
                            {"fpt", -1, "Use this FPT instead of detecting it (single record only)"}};
    for (auto& x : feature_flags()) f.push_back(x);
    for (auto& x : fpt_flags()) f.push_back(x);
    t.push_back({"featurize", "Turn records into a labeled WPD-image dataset", "", f, cmd_featurize});
  }
  {
    std::vector<FlagSpec> f{{"dataset", "", "Training dataset", nullptr, true, true},
                            {"val-dataset", "", "Optional validation dataset (per-epoch MAE)", nullptr, false, true}};
    for (auto& x : train_flags()) f.push_back(x);
    t.push_back({"train", "Train a model; writes a checkpoint and the loss history", "paper", f,
                 cmd_train});
  }
  t.push_back({"eval", "Metrics (MAE, score, late fraction) of a checkpoint on a dataset", "",
               {{"checkpoint", "", "Model checkpoint", nullptr, true, true},
                {"dataset", "", "Dataset to evaluate", nullptr, true, true}},
               cmd_eval});
  t.push_back({"predict", "Per-window RUL predictions as CSV and SVG", "",
               {{"checkpoint", "", "Model checkpoint", nullptr, true, true},
                {"dataset", "", "Dataset to predict", nullptr, true, true}},
               cmd_predict});
  {
    std::vector<FlagSpec> f;
    for (auto& x : train_flags()) {
      if (x.name == "preset") x.def = "desk";
      if (x.name == "seed") x.def = 3;
      if (x.name != "loss") f.push_back(x);
    }
    f.push_back({"train-samples", 64, "Training windows drawn from synthetic bearings"});
    f.push_back({"snapshots", 100, "Snapshots per synthetic bearing"});
    f.push_back({"onset", 50, "Fault onset of the synthetic bearings"});
    f.push_back({"window", 10, "Snapshots per sliding window"});
    f.push_back({"stride", 5, "Window stride in snapshots", 2});
    f.push_back({"level", 3, "Wavelet packet decomposition level"});
    t.push_back({"exp-loss",
                 "Twin training with MSE and the custom loss on identical synthetic data; "
                 "compares held-out MAE, score and late fraction",
                 "desk", f, cmd_exp_loss});
  }
  return t;
}

const CommandSpec& find_command(const std::vector<CommandSpec>& table, const std::string& name) {
  for (const auto& c : table)
    if (c.name == name) return c;
  throw Error(ErrorCode::UsageError, "unknown command '" + name + "'");
}

// ---------------------------------------------------------------------------
// Configuration resolution: preset defaults < config file < explicit flags.

json typed_value(const FlagSpec& spec, const json& v) {
  const auto bad = [&] {
    return Error(ErrorCode::UsageError, "--" + spec.name + ": expected " +
                                            std::string(spec.def.type_name()) + ", got " +
                                            v.dump());
  };
  if (spec.def.is_array()) {
    if (v.is_string()) return json::array({v});
    if (!v.is_array()) throw bad();
    for (const auto& e : v)
      if (!e.is_string()) throw bad();
    return v;
  }
  if (spec.def.is_boolean()) {
    if (!v.is_boolean()) throw bad();
    return v;
  }
  if (spec.def.is_number_integer()) {
    if (!v.is_number_integer()) throw bad();
    return v;
  }
  if (spec.def.is_number()) {
    if (!v.is_number()) throw bad();
    return json(v.get<double>());
  }
  if (!v.is_string()) throw bad();
  return v;
}

json parse_flag(const FlagSpec& spec, const std::string& text) {
  const auto bad = [&] {
    return Error(ErrorCode::UsageError, "--" + spec.name + ": cannot parse '" + text + "'");
  };
  if (spec.def.is_boolean()) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw bad();
  }
  if (spec.def.is_number_integer()) {
    long long v = 0;
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size()) throw bad();
    return v;
  }
  if (spec.def.is_number()) {
    double v = 0.0;
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size() || !std::isfinite(v)) throw bad();
    return v;
  }
  return text;
}

json defaults_for(const CommandSpec& spec, const std::string& preset) {
  json cfg = json::object();
  for (const auto& f : spec.flags)
    cfg[f.name] = (preset == "desk" && !f.desk.is_null()) ? f.desk : f.def;
  if (!spec.default_preset.empty()) cfg["preset"] = preset;
  return cfg;
}

/// Fills in defaults for a partial configuration and type-checks every key.
json resolve(const CommandSpec& spec, const json& file_cfg, const json& flag_cfg) {
  for (const json* layer : {&file_cfg, &flag_cfg})
    for (const auto& [key, _] : layer->items())
      if (std::none_of(spec.flags.begin(), spec.flags.end(),
                       [&](const FlagSpec& f) { return f.name == key; }))
        throw Error(ErrorCode::UsageError,
                    "unknown configuration key '" + key + "' for " + spec.name);
  std::string preset = spec.default_preset;
  if (!preset.empty()) {
    if (flag_cfg.contains("preset")) preset = flag_cfg["preset"].get<std::string>();
    else if (file_cfg.contains("preset")) preset = file_cfg["preset"].get<std::string>();
    if (preset != "paper" && preset != "desk")
      throw Error(ErrorCode::InvalidConfig, "--preset must be paper or desk, got '" + preset + "'");
  }
  json cfg = defaults_for(spec, preset);
  for (const json* layer : {&file_cfg, &flag_cfg})
    for (const auto& f : spec.flags)
      if (layer->contains(f.name)) cfg[f.name] = typed_value(f, (*layer)[f.name]);
  for (const auto& f : spec.flags) {
    const json& v = cfg[f.name];
    if (f.required && ((v.is_string() && v.get<std::string>().empty()) || (v.is_array() && v.empty())))
      throw Error(ErrorCode::UsageError, spec.name + ": --" + f.name + " is required");
  }
  return cfg;
}

json read_json_file(const fs::path& path, ErrorCode missing) {
  std::ifstream in(path);
  if (!in) throw Error(missing, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::UsageError, path.string() + ": " + e.what());
  }
}

void write_manifest(Outputs& outputs, const std::string& command, const json& cfg,
                    const Context& ctx, double total_s, const json& replayed_from) {
  json artifacts = json::object();
  for (const auto& f : outputs.files()) artifacts[f.filename().string()] = fnv1a_hex(f);
  json timings(ctx.timings);
  timings["total"] = total_s;
  json manifest{{"tool", "mcsformer"},
                {"version", MCSFORMER_VERSION},
                {"command", command},
                {"config", cfg},
                {"seed", cfg.contains("seed") ? cfg["seed"] : json(nullptr)},
                {"inputs", ctx.inputs},
                {"output_dir", fs::absolute(outputs.dir()).lexically_normal().string()},
                {"artifacts", artifacts},
                {"timings_s", timings}};
  if (!replayed_from.is_null()) manifest["replayed_from"] = replayed_from;
  outputs.write_text("manifest.json", manifest.dump(2) + "\n");
}

void execute_resolved(const CommandSpec& spec, const json& cfg, const fs::path& out_dir,
                      std::ostream& log, const json& replayed_from) {
  const auto t0 = std::chrono::steady_clock::now();
  Outputs outputs(out_dir);
  Context ctx{outputs, log, {}, {}};
  try {
    spec.handler(cfg, ctx);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("configuration: ") + e.what());
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::IoError, e.what());
  }
  const double total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(outputs, spec.name, cfg, ctx, total, replayed_from);
  outputs.commit();
}

void replay(const fs::path& manifest_path, const fs::path& out_dir, std::ostream& log) {
  const json manifest = read_json_file(manifest_path, ErrorCode::MissingFile);
  if (!manifest.is_object() || !manifest.contains("command") || !manifest.contains("config"))
    throw Error(ErrorCode::CorruptContainer, manifest_path.string() + " is not a run manifest");
  const auto table = command_table();
  const CommandSpec& spec = find_command(table, manifest["command"].get<std::string>());
  const json cfg = resolve(spec, manifest["config"], json::object());
  log << "replaying " << spec.name << " into " << out_dir.string() << "\n";
  execute_resolved(spec, cfg, out_dir, log, fs::absolute(manifest_path).lexically_normal().string());
}

int exit_code_for(ErrorCode code) {
  switch (error_category(code)) {
    case ErrorCategory::Usage: return kExitUsage;
    case ErrorCategory::Numeric: return kExitNumeric;
    case ErrorCategory::Data: return kExitData;
  }
  return kExitData;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

std::vector<std::string> commands() {
  std::vector<std::string> names;
  for (const auto& c : command_table()) names.push_back(c.name);
  names.push_back("replay");
  return names;
}

void execute(const std::string& command, const json& config, const fs::path& out_dir,
             std::ostream& log) {
  const auto table = command_table();
  const CommandSpec& spec = find_command(table, command);
  execute_resolved(spec, resolve(spec, config, json::object()), out_dir, log, nullptr);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto table = command_table();
  CLI::App app{"mcsformer: bearing remaining-useful-life pipeline (WPD images + shifted-window "
               "transformer)",
               "mcsformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MCSFORMER_VERSION);

  struct Bound {
    CLI::App* sub = nullptr;
    std::map<std::string, std::string> scalars;
    std::map<std::string, std::vector<std::string>> lists;
    std::string config_file;
    std::string out_dir;
  };
  std::map<std::string, Bound> bound;
  for (const auto& spec : table) {
    Bound& b = bound[spec.name];
    b.sub = app.add_subcommand(spec.name, spec.help);
    b.sub->add_option("--config", b.config_file, "Flat JSON file of flag values (flags win)");
    b.sub->add_option("--out", b.out_dir, "Output directory")->required();
    for (const auto& f : spec.flags) {
      std::string help = f.help;
      if (!f.desk.is_null()) help += " (desk preset: " + f.desk.dump() + ")";
      if (f.required) help += " [required]";
      CLI::Option* opt = nullptr;
      if (f.def.is_array()) {
        opt = b.sub->add_option("--" + f.name, b.lists[f.name], help);
      } else {
        opt = b.sub->add_option("--" + f.name, b.scalars[f.name], help);
        opt->default_str(f.def.is_string() ? f.def.get<std::string>() : f.def.dump());
      }
      opt->type_name(f.def.is_array()          ? "PATH ..."
                     : f.def.is_boolean()       ? "BOOL"
                     : f.def.is_number_integer() ? "INT"
                     : f.def.is_number()         ? "FLOAT"
                                                 : "TEXT");
    }
  }
  std::string manifest_path, replay_out;
  CLI::App* replay_cmd =
      app.add_subcommand("replay", "Re-run a command from its manifest.json into a new directory");
  replay_cmd->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
  replay_cmd->add_option("--out", replay_out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << MCSFORMER_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: UsageError: " << one_line(e.what()) << "\n";
    return kExitUsage;
  }

  try {
    if (replay_cmd->parsed()) {
      replay(manifest_path, replay_out, out);
      return kExitOk;
    }
    for (const auto& spec : table) {
      Bound& b = bound[spec.name];
      if (!b.sub->parsed()) continue;
      json file_cfg = json::object();
      if (!b.config_file.empty()) {
        file_cfg = read_json_file(b.config_file, ErrorCode::UsageError);
        if (!file_cfg.is_object())
          throw Error(ErrorCode::UsageError, b.config_file + ": expected a flat JSON object");
      }
      json flag_cfg = json::object();
      for (const auto& f : spec.flags) {
        if (b.sub->get_option("--" + f.name)->count() == 0) continue;
        if (f.def.is_array()) flag_cfg[f.name] = b.lists[f.name];
        else flag_cfg[f.name] = parse_flag(f, b.scalars[f.name]);
      }
      json cfg = resolve(spec, file_cfg, flag_cfg);
      for (const auto& f : spec.flags) {
        if (!f.path) continue;
        const auto absolute = [](const std::string& p) {
          return p.empty() ? p : fs::absolute(p).lexically_normal().string();
        };
        if (cfg[f.name].is_array())
          for (auto& e : cfg[f.name]) e = absolute(e.get<std::string>());
        else
          cfg[f.name] = absolute(cfg[f.name].get<std::string>());
      }
      execute_resolved(spec, cfg, b.out_dir, out, nullptr);
      return kExitOk;
    }
    throw Error(ErrorCode::UsageError, "no command given");
  } catch (const Error& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return exit_code_for(e.code());
  } catch (const std::bad_alloc&) {
    err << "error: OutOfMemory: allocation failed\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: IoError: " << one_line(e.what()) << "\n";
    return kExitData;
  }
}

}  // namespace mcsformer::cli

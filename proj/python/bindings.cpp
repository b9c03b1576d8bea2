// Python bindings for the signal, feature, model and evaluation layers plus
// the command-line tool. Arrays cross the boundary as float64 NumPy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "mcsformer/dataio.hpp"
#include "mcsformer/error.hpp"
#include "mcsformer/features.hpp"
#include "mcsformer/model.hpp"
#include "mcsformer/signal.hpp"
#include "mcsformer/traineval.hpp"

namespace py = pybind11;
using namespace mcsformer;

namespace {

using InArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const InArray& a) {
  if (a.ndim() != 1) throw Error(ErrorCode::ShapeMismatch, "expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> image_array(const features::WpdImage& img) {
  py::array_t<double> out({img.side, img.side});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

py::dict record_dict(const features::BearingRecord& r) {
  const std::size_t n = r.size(), m = r.samples_per_snapshot();
  py::array_t<double> hor({n, m}), ver({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(r.snapshots[i].horizontal.samples.begin(), r.snapshots[i].horizontal.samples.end(),
              hor.mutable_data() + i * m);
    std::copy(r.snapshots[i].vertical.samples.begin(), r.snapshots[i].vertical.samples.end(),
              ver.mutable_data() + i * m);
  }
  py::dict d;
  d["bearing_id"] = r.bearing_id;
  d["condition_id"] = r.condition_id;
  d["sample_rate_hz"] = r.sample_rate_hz();
  d["horizontal"] = hor;
  d["vertical"] = ver;
  return d;
}

features::ChannelPolicy policy(const std::string& s) {
  if (s == "horizontal") return features::ChannelPolicy::Horizontal;
  if (s == "vertical") return features::ChannelPolicy::Vertical;
  if (s == "either") return features::ChannelPolicy::Either;
  throw Error(ErrorCode::InvalidConfig, "unknown channel '" + s + "'");
}

model::ModelConfig preset_config(const std::string& name) {
  const auto p = model::preset_from_string(name);
  if (p == model::Preset::Desk) return model::ModelConfig::desk();
  if (p == model::Preset::Paper) return model::ModelConfig::paper();
  throw Error(ErrorCode::InvalidConfig, "preset must be 'paper' or 'desk'");
}

ad::Tensor image_batch(const InArray& a, int side) {
  if (a.ndim() != 3 || a.shape(1) != side || a.shape(2) != side)
    throw Error(ErrorCode::ConfigMismatch,
                "expected images of shape (N, " + std::to_string(side) + ", " +
                    std::to_string(side) + ")");
  const auto n = static_cast<std::size_t>(a.shape(0));
  const auto s = static_cast<std::size_t>(side);
  return ad::Tensor::from({n, 1, s, s}, std::vector<double>(a.data(), a.data() + a.size()));
}

train::PredictionBatch batch_of(const InArray& preds, const InArray& targets) {
  return {to_vector(preds), to_vector(targets)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bearing remaining-useful-life pipeline: wavelet features and a shifted-window "
            "transformer regressor";

  // Leaked on purpose: the exception type must outlive interpreter teardown.
  static const py::handle error_type =
      py::exception<Error>(m, "Error", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = error_type(e.what());
      err.attr("code") = std::string(error_name(e.code()));
      PyErr_SetObject(error_type.ptr(), err.ptr());
    }
  });

  // Signal processing.
  m.def(
      "db5_filters",
      [] {
        const auto fb = signal::db5_filters();
        return py::make_tuple(to_array(fb.lowpass), to_array(fb.highpass));
      },
      "Decomposition (lowpass, highpass) filters of the db5 wavelet.");
  m.def(
      "dwt",
      [](const InArray& x, int levels) {
        const auto c = signal::dwt(to_vector(x), levels, signal::db5_filters());
        py::list details;
        for (const auto& d : c.details) details.append(to_array(d));
        return py::make_tuple(to_array(c.approximation), details);
      },
      py::arg("x"), py::arg("levels"),
      "Multi-level db5 DWT. Returns (approximation, [detail level 1, ...]).");
  m.def(
      "dwt_roundtrip",
      [](const InArray& x, int levels) {
        const auto fb = signal::db5_filters();
        return to_array(signal::idwt(signal::dwt(to_vector(x), levels, fb), fb));
      },
      py::arg("x"), py::arg("levels"), "Forward and inverse db5 DWT.");
  m.def(
      "wpd",
      [](const InArray& x, int level) {
        py::list bands;
        for (const auto& b : signal::wpd(to_vector(x), level, signal::db5_filters()).subbands)
          bands.append(to_array(b));
        return bands;
      },
      py::arg("x"), py::arg("level") = 3, "Wavelet packet subbands (2^level arrays).");
  m.def(
      "wavelet_denoise",
      [](const InArray& x, int levels) {
        return to_array(signal::wavelet_denoise(signal::SignalVector{to_vector(x), 1.0}, levels)
                            .samples);
      },
      py::arg("x"), py::arg("levels") = 2,
      "Soft-threshold shrinkage with the universal threshold.");
  m.def(
      "savgol_filter",
      [](const InArray& x, int window, int order) {
        return to_array(signal::savgol_filter(to_vector(x), signal::savgol_kernel(window, order)));
      },
      py::arg("x"), py::arg("window") = 5, py::arg("order") = 2);
  m.def(
      "savgol_kernel",
      [](int window, int order) { return to_array(signal::savgol_kernel(window, order).weights); },
      py::arg("window") = 5, py::arg("order") = 2);
  m.def(
      "kurtosis", [](const InArray& x) { return signal::kurtosis(to_vector(x)); }, py::arg("x"),
      "Non-excess kurtosis (3 for a Gaussian).");

  // Features.
  m.def(
      "detect_fpt",
      [](const InArray& k, std::size_t baseline, std::size_t run, double sigma)
          -> std::optional<std::size_t> {
        const auto v = to_vector(k);
        features::FptConfig cfg = features::FptConfig::for_record(v.size());
        if (baseline > 0) cfg.baseline_count = baseline;
        cfg.consecutive_required = run;
        cfg.sigma_multiplier = sigma;
        return features::detect_fpt(v, cfg);
      },
      py::arg("kurtosis"), py::arg("baseline") = 0, py::arg("run") = 3, py::arg("sigma") = 3.0,
      "First index starting `run` consecutive values outside the healthy band, or None.");
  m.def(
      "assign_labels",
      [](std::size_t length, std::size_t fpt) { return to_array(features::assign_labels(length, fpt)); },
      py::arg("length"), py::arg("fpt"));
  m.def(
      "wpd_image",
      [](const InArray& x, int level, int side) {
        return image_array(features::wpd_image(to_vector(x), level, side));
      },
      py::arg("x"), py::arg("level") = 3, py::arg("side") = 64);

  // Data.
  m.def(
      "gen_synthetic",
      [](std::size_t snapshots, std::size_t samples, std::size_t onset, double growth,
         std::uint64_t seed) {
        io::SyntheticConfig cfg;
        cfg.n_snapshots = snapshots;
        cfg.samples_per_snapshot = samples;
        cfg.fault_onset_index = onset;
        cfg.fault_growth_rate = growth;
        cfg.seed = seed;
        return record_dict(io::gen_synthetic(cfg));
      },
      py::arg("snapshots") = 100, py::arg("samples") = 2560, py::arg("onset") = 50,
      py::arg("growth") = 3.0, py::arg("seed") = 0,
      "Synthetic run-to-failure record as a dict with (snapshots, samples) arrays.");
  m.def(
      "record_fpt",
      [](const std::string& path, const std::string& channel) -> std::optional<std::size_t> {
        const auto r = io::load_record(path);
        auto cfg = features::FptConfig::for_record(r.size());
        cfg.channel_policy = policy(channel);
        return features::detect_fpt(r, cfg);
      },
      py::arg("path"), py::arg("channel") = "horizontal", "FPT of a saved record container.");
  m.def(
      "load_record", [](const std::string& path) { return record_dict(io::load_record(path)); },
      py::arg("path"));
  m.def(
      "load_pronostia",
      [](const std::string& dir) { return record_dict(io::load_pronostia_bearing(dir)); },
      py::arg("dir"));
  m.def(
      "load_dataset",
      [](const std::string& path) {
        const auto ds = io::load_dataset(path);
        const std::size_t n = ds.samples.size();
        const int side = n ? ds.samples.front().hor.side : 0;
        py::array_t<double> hor({static_cast<int>(n), side, side}),
            ver({static_cast<int>(n), side, side});
        py::array_t<double> labels(static_cast<py::ssize_t>(n));
        const std::size_t px = static_cast<std::size_t>(side) * side;
        for (std::size_t i = 0; i < n; ++i) {
          std::copy(ds.samples[i].hor.pixels.begin(), ds.samples[i].hor.pixels.end(),
                    hor.mutable_data() + i * px);
          std::copy(ds.samples[i].ver.pixels.begin(), ds.samples[i].ver.pixels.end(),
                    ver.mutable_data() + i * px);
          labels.mutable_data()[i] = ds.samples[i].label;
        }
        return py::make_tuple(hor, ver, labels);
      },
      py::arg("path"), "Dataset container as (horizontal images, vertical images, labels).");

  // Model.
  m.def(
      "parameter_count", [](const std::string& preset) { return model::parameter_count(preset_config(preset)); },
      py::arg("preset") = "paper");
  m.def(
      "predict",
      [](const InArray& hor, const InArray& ver, const std::string& preset, std::uint64_t seed) {
        const auto cfg = preset_config(preset);
        const auto params = model::init_params(cfg, seed);
        const auto y = model::forward(params, cfg, image_batch(hor, cfg.image_side),
                                      image_batch(ver, cfg.image_side), false);
        return to_array(std::vector<double>(y.data().begin(), y.data().end()));
      },
      py::arg("hor"), py::arg("ver"), py::arg("preset") = "desk", py::arg("seed") = 0,
      "Inference with freshly initialized weights (shape and determinism checks).");
  m.def(
      "predict_checkpoint",
      [](const std::string& checkpoint, const InArray& hor, const InArray& ver) {
        const auto ck = io::load_checkpoint(checkpoint);
        const auto y = model::forward(ck.params, ck.config, image_batch(hor, ck.config.image_side),
                                      image_batch(ver, ck.config.image_side), false);
        return to_array(std::vector<double>(y.data().begin(), y.data().end()));
      },
      py::arg("checkpoint"), py::arg("hor"), py::arg("ver"));

  // Losses and metrics.
  m.def(
      "custom_loss",
      [](const InArray& p, const InArray& t, double lambda) {
        return train::custom_loss(batch_of(p, t), lambda);
      },
      py::arg("pred"), py::arg("target"), py::arg("lam") = 1.0,
      "mean((pred - target)^2 + lam * max(0, pred - target)).");
  m.def(
      "mse_loss", [](const InArray& p, const InArray& t) { return train::mse_loss(batch_of(p, t)); },
      py::arg("pred"), py::arg("target"));
  m.def("score_term", &train::score_term, py::arg("error"),
        "exp(-e/15) - 1 for early (e < 0), exp(e/5) - 1 for late predictions.");
  m.def(
      "evaluate",
      [](const InArray& p, const InArray& t) {
        const auto r = train::evaluate(batch_of(p, t));
        py::dict d;
        d["mae"] = r.mae;
        d["score_sum"] = r.score_sum;
        d["score_mean"] = r.score_mean;
        d["late_fraction"] = r.late_fraction;
        d["count"] = r.count;
        return d;
      },
      py::arg("pred"), py::arg("target"));

  // Command-line tool.
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one mcsformer command in-process; returns (exit code, stdout, stderr).");
  m.def("commands", &cli::commands);
}

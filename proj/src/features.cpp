#include "mcsformer/features.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <string>
#include <thread>

#include "mcsformer/error.hpp"

namespace mcsformer::features {

std::size_t BearingRecord::samples_per_snapshot() const {
  return snapshots.empty() ? 0 : snapshots.front().horizontal.samples.size();
}

double BearingRecord::sample_rate_hz() const {
  return snapshots.empty() ? 0.0 : snapshots.front().horizontal.sample_rate_hz;
}

const signal::SignalVector& BearingRecord::channel(std::size_t i, Channel c) const {
  return c == Channel::Horizontal ? snapshots[i].horizontal : snapshots[i].vertical;
}

void validate(const BearingRecord& record) {
  if (record.snapshots.empty())
    throw Error(ErrorCode::RecordTooShort, "record '" + record.bearing_id + "' has no snapshots");
  const std::size_t len = record.samples_per_snapshot();
  const double rate = record.sample_rate_hz();
  for (std::size_t i = 0; i < record.snapshots.size(); ++i) {
    for (const auto* s : {&record.snapshots[i].horizontal, &record.snapshots[i].vertical}) {
      if (s->samples.size() != len || s->sample_rate_hz != rate)
        throw Error(ErrorCode::InconsistentSnapshotLength,
                    "snapshot " + std::to_string(i) + " has " +
                        std::to_string(s->samples.size()) + " samples, expected " +
                        std::to_string(len));
    }
  }
}

std::vector<std::size_t> Window::snapshot_indices() const {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), start_snapshot);
  return idx;
}

std::size_t FptConfig::default_baseline_count(std::size_t record_length) {
  return std::max<std::size_t>(4, std::min<std::size_t>(40, record_length / 5));
}

FptConfig FptConfig::for_record(std::size_t record_length) {
  FptConfig cfg;
  cfg.baseline_count = default_baseline_count(record_length);
  return cfg;
}

std::vector<Window> sliding_windows(std::size_t n_snapshots, std::size_t size,
                                    std::size_t stride) {
  if (size < 1 || stride < 1)
    throw Error(ErrorCode::InvalidConfig, "window size and stride must be >= 1");
  if (n_snapshots < size)
    throw Error(ErrorCode::RecordTooShort,
                std::to_string(n_snapshots) + " snapshots, window needs " + std::to_string(size));
  std::vector<Window> out;
  out.reserve((n_snapshots - size) / stride + 1);
  for (std::size_t start = 0; start + size <= n_snapshots; start += stride)
    out.push_back(Window{start, size});
  return out;
}

std::vector<Window> sliding_windows(const BearingRecord& record, std::size_t size,
                                    std::size_t stride) {
  return sliding_windows(record.size(), size, stride);
}

std::vector<double> kurtosis_series(const BearingRecord& record, Channel channel) {
  std::vector<double> out;
  out.reserve(record.size());
  for (std::size_t i = 0; i < record.size(); ++i) {
    try {
      out.push_back(signal::kurtosis(record.channel(i, channel).samples));
    } catch (const Error& e) {
      throw Error(e.code(), "snapshot " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::optional<std::size_t> detect_fpt(std::span<const double> k, const FptConfig& cfg) {
  if (cfg.baseline_count < 4)
    throw Error(ErrorCode::BaselineTooShort,
                "baseline_count must be >= 4, got " + std::to_string(cfg.baseline_count));
  if (cfg.consecutive_required < 1)
    throw Error(ErrorCode::InvalidConfig, "consecutive_required must be >= 1");
  if (k.size() <= cfg.baseline_count)
    throw Error(ErrorCode::BaselineTooShort,
                "series of " + std::to_string(k.size()) + " values does not extend past a " +
                    std::to_string(cfg.baseline_count) + "-point baseline");

  const auto base = k.first(cfg.baseline_count);
  const double n = static_cast<double>(base.size());
  const double mu = std::accumulate(base.begin(), base.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : base) ss += (v - mu) * (v - mu);
  const double sigma = std::sqrt(ss / (n - 1.0));
  const double lo = mu - cfg.sigma_multiplier * sigma;
  const double hi = mu + cfg.sigma_multiplier * sigma;

  std::size_t run = 0;
  for (std::size_t i = cfg.baseline_count; i < k.size(); ++i) {
    run = (k[i] < lo || k[i] > hi) ? run + 1 : 0;
    if (run == cfg.consecutive_required) return i + 1 - run;
  }
  return std::nullopt;
}

std::optional<std::size_t> detect_fpt(const BearingRecord& record, const FptConfig& cfg) {
  auto for_channel = [&](Channel c) { return detect_fpt(kurtosis_series(record, c), cfg); };
  switch (cfg.channel_policy) {
    case ChannelPolicy::Horizontal: return for_channel(Channel::Horizontal);
    case ChannelPolicy::Vertical: return for_channel(Channel::Vertical);
    case ChannelPolicy::Either: {
      const auto h = for_channel(Channel::Horizontal);
      const auto v = for_channel(Channel::Vertical);
      if (h && v) return std::min(*h, *v);
      return h ? h : v;
    }
  }
  return std::nullopt;
}

std::vector<double> assign_labels(std::size_t record_length, std::size_t fpt) {
  if (record_length < 2 || fpt >= record_length - 1)
    throw Error(ErrorCode::FptOutOfRange,
                "fpt " + std::to_string(fpt) + " must be below " +
                    std::to_string(record_length) + " - 1");
  std::vector<double> labels(record_length, 1.0);
  const double span = static_cast<double>(record_length - 1 - fpt);
  for (std::size_t i = fpt + 1; i < record_length; ++i)
    labels[i] = 1.0 - static_cast<double>(i - fpt) / span;
  labels.back() = 0.0;
  return labels;
}

std::vector<double> linear_resample(std::span<const double> x, std::size_t points) {
  if (x.empty() || points == 0) throw Error(ErrorCode::EmptyInput, "resample of empty input");
  std::vector<double> out(points);
  if (points == 1 || x.size() == 1) {
    std::fill(out.begin(), out.end(), x[0]);
    return out;
  }
  const double step = static_cast<double>(x.size() - 1) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    const double pos = static_cast<double>(i) * step;
    const std::size_t left = std::min(static_cast<std::size_t>(pos), x.size() - 2);
    const double frac = pos - static_cast<double>(left);
    out[i] = x[left] + frac * (x[left + 1] - x[left]);
  }
  out.back() = x.back();
  return out;
}

void normalize_image(std::vector<float>& pixels) {
  if (pixels.empty()) return;
  const auto [mn, mx] = std::minmax_element(pixels.begin(), pixels.end());
  const double lo = *mn, hi = *mx;
  if (!(hi > lo)) {
    std::fill(pixels.begin(), pixels.end(), 0.0F);
    return;
  }
  for (float& p : pixels) p = static_cast<float>((static_cast<double>(p) - lo) / (hi - lo));
}

WpdImage wpd_image(std::span<const double> window_signal, int level, int side) {
  if (side < 1 || level < 1)
    throw Error(ErrorCode::InvalidConfig, "image side and WPD level must be positive");
  const std::size_t pixels = static_cast<std::size_t>(side) * side;
  const std::size_t bands = std::size_t{1} << level;
  if (pixels % bands != 0)
    throw Error(ErrorCode::InvalidConfig,
                std::to_string(bands) + " subbands do not tile a " + std::to_string(side) +
                    "x" + std::to_string(side) + " image");
  if (window_signal.size() < pixels)
    throw Error(ErrorCode::SignalTooShort,
                std::to_string(window_signal.size()) + " samples for a " +
                    std::to_string(pixels) + "-pixel image");

  const auto tree = signal::wpd(window_signal, level, signal::db5_filters());
  const std::size_t per_band = pixels / bands;
  std::vector<double> raw;
  raw.reserve(pixels);
  for (const auto& band : tree.subbands) {
    const auto resampled = linear_resample(band, per_band);
    raw.insert(raw.end(), resampled.begin(), resampled.end());
  }

  WpdImage img;
  img.side = side;
  const auto [mn, mx] = std::minmax_element(raw.begin(), raw.end());
  const double lo = *mn, hi = *mx;
  img.pixels.resize(pixels, 0.0F);
  if (hi > lo)
    for (std::size_t i = 0; i < pixels; ++i)
      img.pixels[i] = static_cast<float>((raw[i] - lo) / (hi - lo));
  return img;
}

BearingRecord denoise_record(const BearingRecord& record, const FeatureConfig& cfg) {
  validate(record);
  const auto fb = signal::db5_filters();
  const auto kernel = signal::savgol_kernel(cfg.savgol_window, cfg.savgol_order);
  BearingRecord out = record;
  auto clean = [&](const signal::SignalVector& s) {
    return signal::savgol_filter(signal::wavelet_denoise(s, cfg.denoise_levels, fb), kernel);
  };
  for (auto& snap : out.snapshots) {
    snap.horizontal = clean(snap.horizontal);
    snap.vertical = clean(snap.vertical);
  }
  return out;
}

std::vector<double> window_signal(const BearingRecord& record, const Window& w, Channel c) {
  if (w.last_snapshot() >= record.size())
    throw Error(ErrorCode::RecordTooShort, "window extends past the record");
  std::vector<double> out;
  out.reserve(w.size * record.samples_per_snapshot());
  for (std::size_t i : w.snapshot_indices()) {
    const auto& s = record.channel(i, c).samples;
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

std::vector<LabeledSample> build_dataset(const BearingRecord& record, std::size_t fpt,
                                         const FeatureConfig& cfg) {
  validate(record);
  const auto labels = assign_labels(record.size(), fpt);
  std::vector<Window> kept;
  for (const Window& w : sliding_windows(record, cfg.window, cfg.stride))
    if (w.last_snapshot() >= fpt) kept.push_back(w);
  if (kept.empty())
    throw Error(ErrorCode::NoPostFptWindows,
                "no window of '" + record.bearing_id + "' ends at or after fpt " +
                    std::to_string(fpt));

  const BearingRecord source = cfg.denoise ? denoise_record(record, cfg) : record;

  auto featurize = [&](const Window& w) {
    LabeledSample s;
    s.hor = wpd_image(window_signal(source, w, Channel::Horizontal), cfg.wpd_level, cfg.image_side);
    s.hor.channel = Channel::Horizontal;
    s.hor.source_window = w;
    s.ver = wpd_image(window_signal(source, w, Channel::Vertical), cfg.wpd_level, cfg.image_side);
    s.ver.channel = Channel::Vertical;
    s.ver.source_window = w;
    s.label = static_cast<float>(labels[w.last_snapshot()]);
    s.bearing_id = record.bearing_id;
    return s;
  };

  // Windows are independent; each worker fills its own slots so the result
  // stays ordered by window start.
  std::vector<LabeledSample> out(kept.size());
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, kept.size());
  std::vector<std::future<void>> jobs;
  for (std::size_t t = 0; t < workers; ++t) {
    jobs.push_back(std::async(std::launch::async, [&, t] {
      for (std::size_t i = t; i < kept.size(); i += workers) out[i] = featurize(kept[i]);
    }));
  }
  for (auto& j : jobs) j.get();
  return out;
}

}  // namespace mcsformer::features

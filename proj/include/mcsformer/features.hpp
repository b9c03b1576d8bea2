#pragma once

// Turning a run-to-failure record into labeled WPD-image samples:
// segmentation, kurtosis onset detection, linear RUL labels, image building.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcsformer/signal.hpp"

namespace mcsformer::features {

enum class Channel { Horizontal, Vertical };
enum class ChannelPolicy { Horizontal, Vertical, Either };

struct Snapshot {
  signal::SignalVector horizontal;
  signal::SignalVector vertical;
};

struct BearingRecord {
  std::vector<Snapshot> snapshots;
  double snapshot_period_s = 10.0;
  std::string bearing_id;
  int condition_id = 0;

  std::size_t size() const { return snapshots.size(); }
  std::size_t samples_per_snapshot() const;
  double sample_rate_hz() const;
  const signal::SignalVector& channel(std::size_t i, Channel c) const;
};

/// Throws RecordTooShort for an empty record and InconsistentSnapshotLength
/// when snapshots disagree on length or sample rate.
void validate(const BearingRecord& record);

struct Window {
  std::size_t start_snapshot = 0;
  std::size_t size = 10;

  std::size_t last_snapshot() const { return start_snapshot + size - 1; }
  std::vector<std::size_t> snapshot_indices() const;
  bool operator==(const Window&) const = default;
};

struct WpdImage {
  int side = 64;
  std::vector<float> pixels;  // row-major side x side
  Channel channel = Channel::Horizontal;
  Window source_window;

  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * side + col]; }
};

struct FptConfig {
  std::size_t baseline_count = 40;
  std::size_t consecutive_required = 3;
  double sigma_multiplier = 3.0;
  ChannelPolicy channel_policy = ChannelPolicy::Horizontal;

  /// min(40, 20% of the record), never below 4.
  static std::size_t default_baseline_count(std::size_t record_length);
  static FptConfig for_record(std::size_t record_length);
};

struct LabeledSample {
  WpdImage hor;
  WpdImage ver;
  float label = 1.0F;
  std::string bearing_id;
};

struct FeatureConfig {
  std::size_t window = 10;
  std::size_t stride = 5;
  int wpd_level = 3;
  int image_side = 64;
  bool denoise = true;
  int denoise_levels = 2;
  int savgol_window = 5;
  int savgol_order = 2;
};

std::vector<Window> sliding_windows(std::size_t n_snapshots, std::size_t size = 10,
                                    std::size_t stride = 5);
std::vector<Window> sliding_windows(const BearingRecord& record, std::size_t size = 10,
                                    std::size_t stride = 5);

/// One kurtosis value per snapshot. A degenerate snapshot raises
/// ZeroVariance naming its index.
std::vector<double> kurtosis_series(const BearingRecord& record, Channel channel);

/// First index i >= baseline_count opening a run of `consecutive_required`
/// values outside mu +/- m*sigma of the baseline prefix; nullopt if none.
std::optional<std::size_t> detect_fpt(std::span<const double> k, const FptConfig& cfg);

/// Applies the channel policy (Either = earliest of the two channels).
std::optional<std::size_t> detect_fpt(const BearingRecord& record, const FptConfig& cfg);

/// 1 up to and including fpt, then linear decay reaching 0 at the last index.
std::vector<double> assign_labels(std::size_t record_length, std::size_t fpt);

/// Level-`level` WPD of one channel's concatenated window, each subband
/// linearly resampled to side^2 / 2^level points and laid out as a
/// contiguous block of rows (subband 0 on top), then min-max normalized.
WpdImage wpd_image(std::span<const double> window_signal, int level = 3, int side = 64);

/// Min-max to [0, 1]; a constant image becomes all zeros.
void normalize_image(std::vector<float>& pixels);

std::vector<double> linear_resample(std::span<const double> x, std::size_t points);

/// Wavelet shrinkage followed by Savitzky-Golay smoothing on every
/// snapshot of both channels.
BearingRecord denoise_record(const BearingRecord& record, const FeatureConfig& cfg);

/// Concatenation of the window's snapshots on one channel.
std::vector<double> window_signal(const BearingRecord& record, const Window& w, Channel c);

/// Labeled samples for every window whose last snapshot is at or after fpt.
/// The record is denoised first when cfg.denoise is set.
std::vector<LabeledSample> build_dataset(const BearingRecord& record, std::size_t fpt,
                                         const FeatureConfig& cfg);

}  // namespace mcsformer::features

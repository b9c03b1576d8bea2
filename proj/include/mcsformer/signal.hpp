#pragma once

// Wavelet filter banks, periodized DWT / wavelet packets, wavelet shrinkage,
// Savitzky-Golay smoothing and moment statistics for vibration snapshots.
//
// All functions are pure; they may be called concurrently.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mcsformer::signal {

/// One vibration snapshot. PRONOSTIA snapshots are 2560 samples at 25.6 kHz.
struct SignalVector {
  std::vector<double> samples;
  double sample_rate_hz = 25600.0;
};

/// Throws EmptyInput / InvalidConfig when the snapshot is empty, has a
/// non-positive rate or contains non-finite samples.
void validate(const SignalVector& x);

/// Orthonormal two-channel analysis pair. Synthesis uses the same taps
/// (the transform is orthogonal), so no separate reconstruction set is kept.
struct FilterBank {
  std::string name;
  std::vector<double> lowpass;   // decomposition lowpass
  std::vector<double> highpass;  // highpass[j] = (-1)^(j+1) lowpass[L-1-j]

  std::size_t taps() const { return lowpass.size(); }
  /// Reconstruction lowpass: time reversal of the decomposition lowpass.
  std::vector<double> reconstruction_lowpass() const;
  std::vector<double> reconstruction_highpass() const;
};

/// Tabulated 10-tap Daubechies-5 pair.
FilterBank db5_filters();

/// Daubechies-N (1 <= N <= 10) built by spectral factorization of the
/// maximally-flat half-band polynomial, minimum-phase root selection.
FilterBank daubechies_filters(int order);

struct LevelCoeffs {
  std::vector<double> approx;
  std::vector<double> detail;
};

/// Single analysis step with periodized boundaries. Odd-length input is
/// wrap-padded with its first sample, so each output has ceil(N/2) entries.
LevelCoeffs dwt_level(std::span<const double> x, const FilterBank& fb);

/// Exact inverse of dwt_level. Returns 2 * approx.size() samples; callers
/// holding an odd-length original drop the trailing pad sample.
std::vector<double> idwt_level(std::span<const double> approx,
                               std::span<const double> detail,
                               const FilterBank& fb);

struct DwtCoeffs {
  std::vector<double> approximation;
  std::vector<std::vector<double>> details;  // level 1 first
  int levels = 0;
  std::vector<std::size_t> input_lengths;    // signal length entering each level
};

DwtCoeffs dwt(std::span<const double> x, int levels, const FilterBank& fb);
std::vector<double> idwt(const DwtCoeffs& coeffs, const FilterBank& fb);

enum class SubbandOrder { Natural, Sequency };

struct WpdTree {
  int level = 0;
  std::vector<std::vector<double>> subbands;
  SubbandOrder ordering = SubbandOrder::Natural;
};

/// Full wavelet packet tree: both branches split at every level. Subbands
/// come back in natural (filter-path) order: bit k of the index, counted
/// from the most significant, is 1 when level k+1 took the highpass branch.
WpdTree wpd(std::span<const double> x, int level, const FilterBank& fb);

/// Reorders a natural-order tree by increasing frequency (Gray-code map).
WpdTree sequency_view(const WpdTree& tree);

/// Donoho universal threshold sigma * sqrt(2 ln n), sigma = MAD / 0.6745.
double universal_threshold(std::span<const double> detail, std::size_t n);

std::vector<double> soft_threshold(std::span<const double> c, double t);

/// Decompose to `levels`, soft-threshold every detail band with the universal
/// threshold estimated from the level-1 band, reconstruct. The approximation
/// band is left alone and the output has the input's length.
SignalVector wavelet_denoise(const SignalVector& x, int levels,
                             const FilterBank& fb);
SignalVector wavelet_denoise(const SignalVector& x, int levels = 2);

struct SavGolKernel {
  std::vector<double> weights;
  int window = 0;
  int poly_order = 0;
};

SavGolKernel savgol_kernel(int window = 5, int order = 2);

/// Centered smoothing; (window-1)/2 samples mirrored about each edge sample.
SignalVector savgol_filter(const SignalVector& x, const SavGolKernel& k);
std::vector<double> savgol_filter(std::span<const double> x,
                                  const SavGolKernel& k);

/// Pearson (non-excess) kurtosis m4 / m2^2 from central sample moments.
double kurtosis(std::span<const double> x);

double median(std::vector<double> values);
double energy(std::span<const double> x);

}  // namespace mcsformer::signal

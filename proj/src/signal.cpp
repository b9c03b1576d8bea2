#include "mcsformer/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <string>

#include "mcsformer/error.hpp"

namespace mcsformer::signal {

namespace {

std::size_t wrap(long long i, std::size_t n) {
  const long long m = static_cast<long long>(n);
  long long r = i % m;
  return static_cast<std::size_t>(r < 0 ? r + m : r);
}

std::vector<double> quadrature_mirror(const std::vector<double>& lo) {
  const std::size_t len = lo.size();
  std::vector<double> hi(len);
  for (std::size_t j = 0; j < len; ++j) {
    const double sign = (j % 2 == 0) ? -1.0 : 1.0;
    hi[j] = sign * lo[len - 1 - j];
  }
  return hi;
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

using cplx = std::complex<double>;

cplx horner(const std::vector<cplx>& monic, cplx z) {
  cplx acc = 1.0;
  for (std::size_t i = 1; i < monic.size(); ++i) acc = acc * z + monic[i];
  return acc;
}

// Roots of a polynomial given highest-degree-first coefficients.
std::vector<cplx> polynomial_roots(const std::vector<double>& coeffs) {
  const std::size_t degree = coeffs.size() - 1;
  std::vector<cplx> monic(coeffs.size());
  for (std::size_t i = 0; i < coeffs.size(); ++i) monic[i] = coeffs[i] / coeffs[0];

  std::vector<cplx> roots(degree);
  const cplx seed(0.4, 0.9);
  for (std::size_t i = 0; i < degree; ++i) roots[i] = std::pow(seed, static_cast<int>(i));

  // Durand-Kerner, then Newton polishing.
  for (int iter = 0; iter < 2000; ++iter) {
    double change = 0.0;
    for (std::size_t i = 0; i < degree; ++i) {
      cplx denom = 1.0;
      for (std::size_t j = 0; j < degree; ++j)
        if (j != i) denom *= (roots[i] - roots[j]);
      const cplx step = horner(monic, roots[i]) / denom;
      roots[i] -= step;
      change = std::max(change, std::abs(step));
    }
    if (change < 1e-15) break;
  }
  for (auto& r : roots) {
    for (int iter = 0; iter < 5; ++iter) {
      cplx p = 1.0, dp = 0.0;
      for (std::size_t i = 1; i < monic.size(); ++i) {
        dp = dp * r + p;
        p = p * r + monic[i];
      }
      if (std::abs(dp) == 0.0) break;
      r -= p / dp;
    }
  }
  return roots;
}

}  // namespace

void validate(const SignalVector& x) {
  if (x.samples.empty()) throw Error(ErrorCode::EmptyInput, "signal has no samples");
  if (!(x.sample_rate_hz > 0.0) || !std::isfinite(x.sample_rate_hz))
    throw Error(ErrorCode::InvalidConfig, "sample rate must be positive");
  for (std::size_t i = 0; i < x.samples.size(); ++i)
    if (!std::isfinite(x.samples[i]))
      throw Error(ErrorCode::InvalidConfig,
                  "non-finite sample at index " + std::to_string(i));
}

std::vector<double> FilterBank::reconstruction_lowpass() const {
  return {lowpass.rbegin(), lowpass.rend()};
}

std::vector<double> FilterBank::reconstruction_highpass() const {
  return {highpass.rbegin(), highpass.rend()};
}

// The 10-tap table published with common wavelet libraries is rounded at
// about 1e-12, which leaves orthonormality residuals of the same size. The
// spectral factorization below agrees with that table to 1e-12 and is
// orthonormal to rounding error, so it is used directly.
FilterBank db5_filters() {
  FilterBank fb = daubechies_filters(5);
  fb.name = "db5";
  return fb;
}

FilterBank daubechies_filters(int order) {
  if (order < 1 || order > 10)
    throw Error(ErrorCode::InvalidConfig,
                "Daubechies order must be in [1, 10], got " + std::to_string(order));

  // Minimum-phase factor: (1 + z^-1)^N times one zero per root of the
  // half-band polynomial P(y) = sum_k C(N-1+k, k) y^k, y = (2 - z - 1/z) / 4.
  std::vector<cplx> h{1.0};
  auto convolve = [&h](cplx a, cplx b) {
    std::vector<cplx> out(h.size() + 1, 0.0);
    for (std::size_t i = 0; i < h.size(); ++i) {
      out[i] += h[i] * a;
      out[i + 1] += h[i] * b;
    }
    h = std::move(out);
  };
  for (int i = 0; i < order; ++i) convolve(1.0, 1.0);

  if (order > 1) {
    std::vector<double> coeffs(order);
    for (int k = 0; k < order; ++k) coeffs[order - 1 - k] = binomial(order - 1 + k, k);
    for (const cplx& y : polynomial_roots(coeffs)) {
      const cplx b = 2.0 - 4.0 * y;
      const cplx disc = std::sqrt(b * b - 4.0);
      cplx z = (b + disc) / 2.0;
      if (std::abs(z) > 1.0) z = (b - disc) / 2.0;
      convolve(1.0, -z);
    }
  }

  std::vector<double> min_phase(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) min_phase[i] = h[i].real();
  const double scale =
      std::sqrt(2.0) / std::accumulate(min_phase.begin(), min_phase.end(), 0.0);
  for (double& v : min_phase) v *= scale;

  FilterBank fb;
  fb.name = "db" + std::to_string(order);
  fb.lowpass.assign(min_phase.rbegin(), min_phase.rend());
  fb.highpass = quadrature_mirror(fb.lowpass);
  return fb;
}

LevelCoeffs dwt_level(std::span<const double> input, const FilterBank& fb) {
  if (input.empty()) throw Error(ErrorCode::EmptyInput, "dwt_level on empty vector");
  std::vector<double> padded;
  std::span<const double> x = input;
  if (input.size() % 2 == 1) {
    padded.assign(input.begin(), input.end());
    padded.push_back(input[0]);
    x = padded;
  }
  const std::size_t n = x.size();
  const std::size_t half = n / 2;
  LevelCoeffs out{std::vector<double>(half, 0.0), std::vector<double>(half, 0.0)};
  const std::size_t taps = fb.taps();
  for (std::size_t k = 0; k < half; ++k) {
    double a = 0.0, d = 0.0;
    for (std::size_t j = 0; j < taps; ++j) {
      const double v = x[wrap(static_cast<long long>(2 * k + 1) - static_cast<long long>(j), n)];
      a += fb.lowpass[j] * v;
      d += fb.highpass[j] * v;
    }
    out.approx[k] = a;
    out.detail[k] = d;
  }
  return out;
}

std::vector<double> idwt_level(std::span<const double> approx,
                               std::span<const double> detail,
                               const FilterBank& fb) {
  if (approx.size() != detail.size())
    throw Error(ErrorCode::LengthMismatch,
                "approx has " + std::to_string(approx.size()) + " entries, detail " +
                    std::to_string(detail.size()));
  if (approx.empty()) throw Error(ErrorCode::EmptyInput, "idwt_level on empty bands");
  const std::size_t n = 2 * approx.size();
  std::vector<double> x(n, 0.0);
  const std::size_t taps = fb.taps();
  for (std::size_t k = 0; k < approx.size(); ++k) {
    for (std::size_t j = 0; j < taps; ++j) {
      const std::size_t idx =
          wrap(static_cast<long long>(2 * k + 1) - static_cast<long long>(j), n);
      x[idx] += fb.lowpass[j] * approx[k] + fb.highpass[j] * detail[k];
    }
  }
  return x;
}

DwtCoeffs dwt(std::span<const double> x, int levels, const FilterBank& fb) {
  if (x.empty()) throw Error(ErrorCode::EmptyInput, "dwt on empty vector");
  if (levels < 1) throw Error(ErrorCode::InvalidConfig, "dwt needs at least one level");
  if (x.size() < (std::size_t{1} << levels))
    throw Error(ErrorCode::SignalTooShort,
                std::to_string(x.size()) + " samples cannot support " +
                    std::to_string(levels) + " levels");
  DwtCoeffs out;
  out.levels = levels;
  std::vector<double> current(x.begin(), x.end());
  for (int l = 0; l < levels; ++l) {
    out.input_lengths.push_back(current.size());
    LevelCoeffs lc = dwt_level(current, fb);
    out.details.push_back(std::move(lc.detail));
    current = std::move(lc.approx);
  }
  out.approximation = std::move(current);
  return out;
}

std::vector<double> idwt(const DwtCoeffs& coeffs, const FilterBank& fb) {
  if (coeffs.levels < 1 || coeffs.details.size() != static_cast<std::size_t>(coeffs.levels) ||
      coeffs.input_lengths.size() != coeffs.details.size())
    throw Error(ErrorCode::LengthMismatch, "inconsistent DWT coefficient set");
  std::vector<double> current = coeffs.approximation;
  for (int l = coeffs.levels - 1; l >= 0; --l) {
    current = idwt_level(current, coeffs.details[l], fb);
    current.resize(coeffs.input_lengths[l]);
  }
  return current;
}

WpdTree wpd(std::span<const double> x, int level, const FilterBank& fb) {
  if (level < 1) throw Error(ErrorCode::InvalidConfig, "wpd level must be >= 1");
  if (x.size() < (std::size_t{1} << level))
    throw Error(ErrorCode::SignalTooShort,
                std::to_string(x.size()) + " samples cannot support WPD level " +
                    std::to_string(level));
  std::vector<std::vector<double>> nodes{std::vector<double>(x.begin(), x.end())};
  for (int l = 0; l < level; ++l) {
    std::vector<std::vector<double>> next;
    next.reserve(nodes.size() * 2);
    for (const auto& node : nodes) {
      LevelCoeffs lc = dwt_level(node, fb);
      next.push_back(std::move(lc.approx));
      next.push_back(std::move(lc.detail));
    }
    nodes = std::move(next);
  }
  return WpdTree{level, std::move(nodes), SubbandOrder::Natural};
}

WpdTree sequency_view(const WpdTree& tree) {
  if (tree.ordering == SubbandOrder::Sequency) return tree;
  WpdTree out{tree.level, {}, SubbandOrder::Sequency};
  out.subbands.reserve(tree.subbands.size());
  for (std::size_t p = 0; p < tree.subbands.size(); ++p)
    out.subbands.push_back(tree.subbands[p ^ (p >> 1)]);
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "median of empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

double universal_threshold(std::span<const double> detail, std::size_t n) {
  if (detail.empty()) throw Error(ErrorCode::EmptyInput, "threshold of empty detail band");
  if (n < 2) throw Error(ErrorCode::TooShort, "signal length must be >= 2");
  std::vector<double> mags(detail.size());
  std::transform(detail.begin(), detail.end(), mags.begin(),
                 [](double v) { return std::abs(v); });
  const double sigma = median(std::move(mags)) / 0.6745;
  return sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
}

std::vector<double> soft_threshold(std::span<const double> c, double t) {
  if (t < 0.0 || std::isnan(t))
    throw Error(ErrorCode::NegativeThreshold, "threshold " + std::to_string(t));
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double shrunk = std::abs(c[i]) - t;
    out[i] = shrunk > 0.0 ? std::copysign(shrunk, c[i]) : 0.0;
  }
  return out;
}

SignalVector wavelet_denoise(const SignalVector& x, int levels, const FilterBank& fb) {
  validate(x);
  DwtCoeffs coeffs = dwt(x.samples, levels, fb);
  const double t = universal_threshold(coeffs.details.front(), x.samples.size());
  for (auto& d : coeffs.details) d = soft_threshold(d, t);
  return SignalVector{idwt(coeffs, fb), x.sample_rate_hz};
}

SignalVector wavelet_denoise(const SignalVector& x, int levels) {
  return wavelet_denoise(x, levels, db5_filters());
}

SavGolKernel savgol_kernel(int window, int order) {
  if (window < 1 || window % 2 == 0)
    throw Error(ErrorCode::InvalidWindow,
                "window must be odd and positive, got " + std::to_string(window));
  if (order < 0 || order >= window)
    throw Error(ErrorCode::OrderTooHigh,
                "order " + std::to_string(order) + " needs window > order");
  const int half = window / 2;

  // The smoother is the projection onto polynomials of degree <= order
  // sampled at -half..half; its centre row is sum_k q_k[centre] * q_k for an
  // orthonormal basis {q_k} obtained by modified Gram-Schmidt.
  std::vector<std::vector<double>> basis;
  for (int p = 0; p <= order; ++p) {
    std::vector<double> col(window);
    for (int i = 0; i < window; ++i) col[i] = std::pow(static_cast<double>(i - half), p);
    for (const auto& q : basis) {
      const double proj = std::inner_product(col.begin(), col.end(), q.begin(), 0.0);
      for (int i = 0; i < window; ++i) col[i] -= proj * q[i];
    }
    const double norm = std::sqrt(energy(col));
    for (double& v : col) v /= norm;
    basis.push_back(std::move(col));
  }
  SavGolKernel k{std::vector<double>(window, 0.0), window, order};
  for (const auto& q : basis)
    for (int i = 0; i < window; ++i) k.weights[i] += q[half] * q[i];
  return k;
}

std::vector<double> savgol_filter(std::span<const double> x, const SavGolKernel& k) {
  const std::size_t n = x.size();
  if (n < static_cast<std::size_t>(k.window) || n < 2)
    throw Error(ErrorCode::SignalTooShort,
                std::to_string(n) + " samples shorter than window " +
                    std::to_string(k.window));
  const long long half = k.window / 2;
  const long long last = static_cast<long long>(n) - 1;
  auto mirrored = [&](long long i) {
    if (i < 0) return x[static_cast<std::size_t>(-i)];
    if (i > last) return x[static_cast<std::size_t>(2 * last - i)];
    return x[static_cast<std::size_t>(i)];
  };
  std::vector<double> out(n);
  for (long long i = 0; i <= last; ++i) {
    double acc = 0.0;
    for (long long j = -half; j <= half; ++j) acc += k.weights[j + half] * mirrored(i + j);
    out[i] = acc;
  }
  return out;
}

SignalVector savgol_filter(const SignalVector& x, const SavGolKernel& k) {
  validate(x);
  return SignalVector{savgol_filter(std::span<const double>(x.samples), k), x.sample_rate_hz};
}

double kurtosis(std::span<const double> x) {
  if (x.size() < 4)
    throw Error(ErrorCode::TooShort,
                "kurtosis needs >= 4 samples, got " + std::to_string(x.size()));
  if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }))
    throw Error(ErrorCode::ZeroVariance, "all samples equal");
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  if (m2 == 0.0) throw Error(ErrorCode::ZeroVariance, "second central moment is zero");
  return m4 / (m2 * m2);
}

}  // namespace mcsformer::signal

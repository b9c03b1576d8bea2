#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "support/oracles.hpp"
#include "mcsformer/error.hpp"
#include "mcsformer/random.hpp"
#include "mcsformer/signal.hpp"

using namespace mcsformer;
using namespace mcsformer::signal;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  SeededRng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mcsformer::Error");
  return ErrorCode::UsageError;
}

// Independent least-squares oracle: weights of the centered polynomial fit,
// from the normal equations (A^T A) c = A^T e_j solved by Gaussian
// elimination, evaluated at offset 0.
}  // namespace

TEST_CASE("db5 filter bank is admissible and orthonormal") {
  const FilterBank fb = db5_filters();
  REQUIRE(fb.taps() == 10);
  CHECK(fb.name == "db5");
  const double sum = std::accumulate(fb.lowpass.begin(), fb.lowpass.end(), 0.0);
  CHECK(std::abs(sum - std::sqrt(2.0)) < 1e-12);
  CHECK(std::abs(energy(fb.lowpass) - 1.0) < 1e-12);
  // Double-shift orthogonality.
  for (std::size_t k = 1; k < 5; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j + 2 * k < 10; ++j) s += fb.lowpass[j] * fb.lowpass[j + 2 * k];
    CHECK(std::abs(s) < 1e-12);
  }
  // Quadrature mirror.
  for (std::size_t j = 0; j < 10; ++j) {
    const double sign = (j % 2 == 0) ? -1.0 : 1.0;
    CHECK(fb.highpass[j] == sign * fb.lowpass[9 - j]);
  }
  CHECK(fb.reconstruction_lowpass().front() == fb.lowpass.back());
}

TEST_CASE("generic Daubechies factorization reproduces the db5 table") {
  // Published db5 decomposition lowpass.
  const std::vector<double> table = {
      0.003335725285001549, -0.012580751999015526, -0.006241490213011705,
      0.07757149384006515,  -0.03224486958502952,  -0.24229488706619015,
      0.13842814590110342,  0.7243085284385744,    0.6038292697974729,
      0.160102397974125};
  CHECK(max_abs_diff(table, daubechies_filters(5).lowpass) < 1e-10);
  CHECK(max_abs_diff(table, db5_filters().lowpass) < 1e-10);
  CHECK(db5_filters().name == "db5");
  const FilterBank haar = daubechies_filters(1);
  REQUIRE(haar.taps() == 2);
  CHECK(haar.lowpass[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
  for (int n = 1; n <= 10; ++n) {
    const FilterBank fb = daubechies_filters(n);
    CHECK(fb.taps() == static_cast<std::size_t>(2 * n));
    CHECK(std::abs(energy(fb.lowpass) - 1.0) < 1e-9);
  }
  CHECK(code_of([] { daubechies_filters(0); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { daubechies_filters(11); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("dwt_level on a constant passes DC and annihilates detail") {
  const std::vector<double> x(8, 2.5);
  const auto lc = dwt_level(x, db5_filters());
  REQUIRE(lc.approx.size() == 4);
  for (double a : lc.approx) CHECK(std::abs(a - 2.5 * std::sqrt(2.0)) < 1e-12);
  for (double d : lc.detail) CHECK(std::abs(d) < 1e-12);
}

TEST_CASE("dwt_level preserves the energy of an impulse") {
  std::vector<double> x(16, 0.0);
  x[0] = 1.0;
  const auto lc = dwt_level(x, db5_filters());
  CHECK(std::abs(energy(lc.approx) + energy(lc.detail) - 1.0) < 1e-12);
}

TEST_CASE("single-level round trip and inverse examples") {
  const FilterBank fb = db5_filters();
  const auto x = randn(64, 11);
  const auto lc = dwt_level(x, fb);
  CHECK(max_abs_diff(idwt_level(lc.approx, lc.detail, fb), x) < 1e-10);

  const std::vector<double> a(4, 3.0 * std::sqrt(2.0)), zeros(4, 0.0);
  for (double v : idwt_level(a, zeros, fb)) CHECK(std::abs(v - 3.0) < 1e-12);
  for (double v : idwt_level(zeros, zeros, fb)) CHECK(v == 0.0);

  CHECK(code_of([&] { idwt_level(a, std::vector<double>(3, 0.0), fb); }) ==
        ErrorCode::LengthMismatch);
  CHECK(code_of([&] { dwt_level(std::vector<double>{}, fb); }) == ErrorCode::EmptyInput);
}

TEST_CASE("odd lengths are wrap-padded and trimmed on reconstruction") {
  const FilterBank fb = db5_filters();
  const auto x = randn(37, 5);
  const auto lc = dwt_level(x, fb);
  CHECK(lc.approx.size() == 19);
  const auto y = idwt_level(lc.approx, lc.detail, fb);
  REQUIRE(y.size() == 38);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-10);
  CHECK(std::abs(y[37] - x[0]) < 1e-10);
}

TEST_CASE("multi-level dwt lengths follow ceil(N / 2^L) and reconstruct") {
  const FilterBank fb = db5_filters();
  for (std::size_t n : {64u, 100u, 1023u, 4096u}) {
    const auto x = randn(n, n);
    const auto c = dwt(x, 4, fb);
    REQUIRE(c.details.size() == 4);
    for (int l = 1; l <= 4; ++l) {
      const std::size_t expect = (n + (1u << l) - 1) >> l;
      // Per-level wrap padding can add one sample per level on odd lengths.
      CHECK(c.details[l - 1].size() >= expect);
      CHECK(c.details[l - 1].size() <= expect + 1);
    }
    CHECK(max_abs_diff(idwt(c, fb), x) < 1e-10);
  }
}

TEST_CASE("wpd splits a snapshot into equal subbands and conserves energy") {
  const FilterBank fb = db5_filters();
  const auto x = randn(2560, 3);
  const WpdTree t = wpd(x, 3, fb);
  REQUIRE(t.subbands.size() == 8);
  for (const auto& b : t.subbands) CHECK(b.size() == 320);
  double total = 0.0;
  for (const auto& b : t.subbands) total += energy(b);
  CHECK(std::abs(total - energy(x)) / energy(x) < 1e-8);

  const WpdTree c = wpd(std::vector<double>(64, 1.0), 3, fb);
  CHECK(energy(c.subbands[0]) > 1.0);
  for (std::size_t b = 1; b < 8; ++b) CHECK(energy(c.subbands[b]) < 1e-20);

  CHECK(code_of([&] { wpd(std::vector<double>(4, 1.0), 3, fb); }) == ErrorCode::SignalTooShort);
}

TEST_CASE("sequency view orders subbands by frequency") {
  const FilterBank fb = db5_filters();
  // A pure tone in the upper half of the band lands in a highpass-first
  // path; the sequency view must place the peak energy at the matching
  // frequency slot.
  const std::size_t n = 1024;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = std::sin(2.0 * std::acos(-1.0) * (5.5 / 16.0) * 0.5 * static_cast<double>(i));
  const WpdTree nat = wpd(x, 3, fb);
  const WpdTree seq = sequency_view(nat);
  CHECK(seq.ordering == SubbandOrder::Sequency);
  std::size_t best = 0;
  for (std::size_t b = 1; b < 8; ++b)
    if (energy(seq.subbands[b]) > energy(seq.subbands[best])) best = b;
  // Tone at 0.171875 cycles/sample = 5.5/32 of the sampling rate, i.e. in
  // the sixth of 16 half-width slots, which is sequency band 2 of 8.
  CHECK(best == 2);
  for (std::size_t p = 0; p < 8; ++p) CHECK(seq.subbands[p] == nat.subbands[p ^ (p >> 1)]);
}

TEST_CASE("universal threshold examples") {
  std::vector<double> d(101, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (i % 2 == 0 ? 1.0 : -1.0) * 0.6745;
  CHECK(universal_threshold(d, 1024) == doctest::Approx(std::sqrt(2.0 * std::log(1024.0))).epsilon(1e-12));
  CHECK(std::sqrt(2.0 * std::log(1024.0)) == doctest::Approx(3.7233).epsilon(1e-4));
  CHECK(universal_threshold(std::vector<double>(10, 0.0), 100) == 0.0);
  const auto r = randn(200, 9);
  std::vector<double> r3(r);
  for (double& v : r3) v *= 3.0;
  CHECK(universal_threshold(r3, 400) == doctest::Approx(3.0 * universal_threshold(r, 400)));
  CHECK(code_of([] { universal_threshold(std::vector<double>{}, 4); }) == ErrorCode::EmptyInput);
}

TEST_CASE("soft threshold examples and shrinkage") {
  CHECK(soft_threshold(std::vector<double>{5.0}, 3.0)[0] == 2.0);
  CHECK(soft_threshold(std::vector<double>{-2.0}, 3.0)[0] == 0.0);
  CHECK(soft_threshold(std::vector<double>{-7.0}, 3.0)[0] == -4.0);
  const auto x = randn(500, 21);
  CHECK(soft_threshold(x, 0.0) == x);
  const auto y = soft_threshold(x, 0.7);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
  CHECK(code_of([&] { soft_threshold(x, -1.0); }) == ErrorCode::NegativeThreshold);
}

TEST_CASE("wavelet denoising examples") {
  const SignalVector flat{std::vector<double>(256, 1.75), 25600.0};
  const auto out = wavelet_denoise(flat, 2);
  REQUIRE(out.samples.size() == 256);
  CHECK(max_abs_diff(out.samples, flat.samples) < 1e-10);

  const SignalVector noise{randn(2560, 17), 25600.0};
  const auto dn = wavelet_denoise(noise, 2);
  CHECK(energy(dn.samples) < energy(noise.samples));

  const std::size_t n = 2048;
  std::vector<double> clean(n), noisy(n);
  const auto eps = randn(n, 23, 0.3);
  for (std::size_t i = 0; i < n; ++i) {
    clean[i] = std::sin(2.0 * std::acos(-1.0) * static_cast<double>(i) / 64.0);
    noisy[i] = clean[i] + eps[i];
  }
  auto corr = [&](const std::vector<double>& a) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ab += a[i] * clean[i];
      aa += a[i] * a[i];
      bb += clean[i] * clean[i];
    }
    return ab / std::sqrt(aa * bb);
  };
  const auto den = wavelet_denoise(SignalVector{noisy, 25600.0}, 2);
  CHECK(corr(den.samples) > corr(noisy));

  // Odd lengths keep their length.
  CHECK(wavelet_denoise(SignalVector{randn(101, 2), 1.0}, 2).samples.size() == 101);
  CHECK(code_of([] { wavelet_denoise(SignalVector{{1.0, 2.0, 3.0}, 1.0}, 2); }) ==
        ErrorCode::SignalTooShort);
}

TEST_CASE("Savitzky-Golay (5,2) kernel matches the normal-equations oracle") {
  const auto k = savgol_kernel(5, 2);
  const auto oracle = testing::savgol_normal_equations(5, 2);
  const std::vector<double> expected{-3.0 / 35, 12.0 / 35, 17.0 / 35, 12.0 / 35, -3.0 / 35};
  CHECK(max_abs_diff(k.weights, oracle) < 1e-12);
  CHECK(max_abs_diff(k.weights, expected) < 1e-12);
  CHECK(std::abs(std::accumulate(k.weights.begin(), k.weights.end(), 0.0) - 1.0) < 1e-12);
  for (int w : {7, 9, 11})
    for (int o = 0; o < 4; ++o) {
      const auto kk = savgol_kernel(w, o);
      CHECK(max_abs_diff(kk.weights, testing::savgol_normal_equations(w, o)) < 1e-10);
      for (std::size_t i = 0; i < kk.weights.size(); ++i)
        CHECK(std::abs(kk.weights[i] - kk.weights[kk.weights.size() - 1 - i]) < 1e-12);
    }
  CHECK(code_of([] { savgol_kernel(4, 2); }) == ErrorCode::InvalidWindow);
  CHECK(code_of([] { savgol_kernel(5, 5); }) == ErrorCode::OrderTooHigh);
}

TEST_CASE("Savitzky-Golay filter examples") {
  const auto k = savgol_kernel(5, 2);
  const SignalVector four{{4, 4, 4, 4, 4}, 1.0};
  for (double v : savgol_filter(four, k).samples) CHECK(std::abs(v - 4.0) < 1e-12);

  std::vector<double> line(10);
  std::iota(line.begin(), line.end(), 0.0);
  const auto y = savgol_filter(line, k);
  for (std::size_t i = 2; i + 2 < line.size(); ++i) CHECK(std::abs(y[i] - line[i]) < 1e-10);

  std::vector<double> quad(40);
  for (std::size_t i = 0; i < quad.size(); ++i) {
    const double t = static_cast<double>(i);
    quad[i] = 0.5 - 1.3 * t + 0.07 * t * t;
  }
  const auto yq = savgol_filter(quad, k);
  for (std::size_t i = 2; i + 2 < quad.size(); ++i) CHECK(std::abs(yq[i] - quad[i]) < 1e-10);

  std::vector<double> spike(11, 0.0);
  spike[5] = 1.0;
  CHECK(savgol_filter(spike, k)[5] == doctest::Approx(17.0 / 35.0).epsilon(1e-12));

  CHECK(code_of([&] { savgol_filter(std::vector<double>{1, 2, 3}, k); }) ==
        ErrorCode::SignalTooShort);
}

TEST_CASE("kurtosis examples and invariances") {
  std::vector<double> alt(100);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 == 0 ? 1.0 : -1.0;
  CHECK(kurtosis(alt) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(code_of([] { kurtosis(std::vector<double>{5, 5, 5, 5}); }) == ErrorCode::ZeroVariance);
  CHECK(code_of([] { kurtosis(std::vector<double>{1, 2, 3}); }) == ErrorCode::TooShort);

  const auto g = randn(1000000, 2024);
  CHECK(std::abs(kurtosis(g) - 3.0) < 0.05);

  const auto x = randn(300, 8);
  std::vector<double> ax(x);
  for (double& v : ax) v = -2.5 * v + 7.0;
  CHECK(std::abs(kurtosis(ax) - kurtosis(x)) < 1e-9);
}

TEST_CASE("signal vector validation") {
  CHECK(code_of([] { validate(SignalVector{{}, 1.0}); }) == ErrorCode::EmptyInput);
  CHECK(code_of([] { validate(SignalVector{{1.0, NAN}, 1.0}); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { validate(SignalVector{{1.0}, 0.0}); }) == ErrorCode::InvalidConfig);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

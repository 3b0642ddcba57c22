#include <doctest.h>

#include <cmath>
#include <numbers>

#include "eyemod/channel.hpp"
#include "eyemod/error.hpp"
#include "eyemod/synth.hpp"
#include "support/oracles.hpp"

using namespace eyemod;

namespace {

ComplexFrame clean(Scheme s, std::uint64_t seed) {
  FrameSpec spec;
  spec.seed = seed;
  return modulate(s, spec);
}

ChannelConfig single_los(double delay) {
  ChannelConfig cfg;
  cfg.path_delays = {delay};
  cfg.path_gains_db = {0.0};
  cfg.k_factor = kCleanSnr;
  return cfg;
}

}  // namespace

TEST_CASE("channel config validation") {
  ChannelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.path_delays = {0.0, 3.4, 1.8};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.path_delays = {0.5, 1.8, 3.4};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.path_gains_db = {0.0};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.k_factor = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("pure LOS single tap is a unit-modulus rotation") {
  const auto in = clean(Scheme::QAM16, 1);
  Rng rng(5);
  const auto out = apply_rician(in, single_los(0.0), rng);
  const cplx rot = out.samples[10] / in.samples[10];
  CHECK(std::abs(rot) == doctest::Approx(1.0));
  for (std::size_t i = 0; i < in.samples.size(); ++i) CHECK(std::abs(out.samples[i] - rot * in.samples[i]) < 1e-9);
}

TEST_CASE("integer delay is an exact shift") {
  const auto in = clean(Scheme::QPSK, 2);
  const auto out = delay_signal(in.samples, 3.0);
  REQUIRE(out.size() == in.samples.size());
  for (std::size_t n = 0; n < 3; ++n) CHECK(std::abs(out[n]) < 1e-12);
  for (std::size_t n = 3; n < in.samples.size(); ++n) CHECK(std::abs(out[n] - in.samples[n - 3]) < 1e-12);
}

TEST_CASE("fractional delay of a complex exponential") {
  const double w = 2.0 * std::numbers::pi * 0.05;
  std::vector<cplx> x(512);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::polar(1.0, w * static_cast<double>(n));
  const auto y = delay_signal(x, 1.8);
  double err = 0.0;
  for (std::size_t n = 20; n + 20 < x.size(); ++n) {
    err = std::max(err, std::abs(y[n] - std::polar(1.0, w * (static_cast<double>(n) - 1.8))));
  }
  CHECK(err < 1e-3);
  CHECK(delay_signal(x, 0.0) == x);
}

TEST_CASE("delay beyond the frame is rejected") {
  const auto in = clean(Scheme::BPSK, 1);
  Rng rng(1);
  try {
    ChannelConfig cfg = single_los(0.0);
    cfg.path_delays = {0.0, 1024.0};
    cfg.path_gains_db = {0.0, -2.0};
    apply_rician(in, cfg, rng);
    FAIL("expected DelayTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DelayTooLarge);
  }
}

TEST_CASE("rician output is renormalized to unit power") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const auto out = apply_rician(clean(Scheme::PSK8, seed), ChannelConfig{}, rng);
    CHECK(out.mean_power() == doctest::Approx(1.0).epsilon(0.01));
  }
}

TEST_CASE("AWGN: clean passthrough, zero-power rejection, metadata") {
  const auto in = clean(Scheme::QAM64, 3);
  Rng rng(2);
  const auto same = apply_awgn(in, kCleanSnr, rng);
  CHECK(same.samples == in.samples);
  ComplexFrame zero = in;
  std::fill(zero.samples.begin(), zero.samples.end(), cplx{});
  try {
    apply_awgn(zero, 10.0, rng);
    FAIL("expected ZeroPower");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroPower);
  }
  CHECK(apply_awgn(in, 5.0, rng).snr_db == 5.0);
}

TEST_CASE("AWGN at -20 dB injects a hundred times the signal power") {
  const auto in = clean(Scheme::QPSK, 4);
  Rng rng(8);
  double noise = 0.0;
  const int frames = 1000;
  for (int f = 0; f < frames; ++f) {
    const auto out = apply_awgn(in, -20.0, rng);
    double p = 0.0;
    for (std::size_t i = 0; i < in.samples.size(); ++i) p += std::norm(out.samples[i] - in.samples[i]);
    noise += p / static_cast<double>(in.samples.size());
  }
  CHECK(noise / frames == doctest::Approx(100.0 * in.mean_power()).epsilon(0.02));
}

TEST_CASE("AWGN at 0 dB: noise power equals signal power, split between I and Q") {
  const auto in = clean(Scheme::QAM16, 5);
  Rng rng(9);
  double pi = 0.0, pq = 0.0;
  for (int f = 0; f < 200; ++f) {
    const auto out = apply_awgn(in, 0.0, rng);
    for (std::size_t i = 0; i < in.samples.size(); ++i) {
      const auto d = out.samples[i] - in.samples[i];
      pi += d.real() * d.real();
      pq += d.imag() * d.imag();
    }
  }
  const double n = 200.0 * 1024.0;
  CHECK((pi + pq) / n == doctest::Approx(in.mean_power()).epsilon(0.02));
  CHECK(pi / pq == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("injected noise is white") {
  std::vector<cplx> ones(10000, cplx{1.0, 0.0});
  ComplexFrame f;
  f.samples = ones;
  f.spec.frame_len = ones.size();
  Rng rng(10);
  const auto out = apply_awgn(f, 0.0, rng);
  std::vector<cplx> n(ones.size());
  for (std::size_t i = 0; i < n.size(); ++i) n[i] = out.samples[i] - ones[i];
  double r0 = 0.0;
  for (const auto& z : n) r0 += std::norm(z);
  for (std::size_t lag = 1; lag <= 5; ++lag) {
    cplx r = 0.0;
    for (std::size_t i = lag; i < n.size(); ++i) r += n[i] * std::conj(n[i - lag]);
    CHECK(std::abs(r) < 0.05 * r0);
  }
}

TEST_CASE("LOS tap magnitudes follow Rician K=4") {
  Rng rng(123);
  ChannelConfig cfg;
  std::vector<double> los, nlos;
  for (int i = 0; i < 10000; ++i) {
    const auto taps = draw_fading_taps(cfg, rng);
    los.push_back(std::abs(taps[0]));
    nlos.push_back(std::abs(taps[1]));
  }
  const double d_los = oracle::ks_statistic(los, [](double r) { return oracle::rician_cdf(r, 4.0); });
  const double d_ray = oracle::ks_statistic(nlos, [](double r) { return oracle::rayleigh_cdf(r); });
  CHECK(oracle::ks_pvalue(d_los, los.size()) > 0.01);
  CHECK(oracle::ks_pvalue(d_ray, nlos.size()) > 0.01);
  // The test must have power: the LOS sample is clearly not Rayleigh.
  const double d_wrong = oracle::ks_statistic(los, [](double r) { return oracle::rayleigh_cdf(r); });
  CHECK(oracle::ks_pvalue(d_wrong, los.size()) < 1e-6);
}

TEST_CASE("rician oracle CDF sanity") {
  CHECK(oracle::rician_cdf(10.0, 4.0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(oracle::rician_cdf(1.5, 0.0) == doctest::Approx(oracle::rayleigh_cdf(1.5)).epsilon(1e-6));
}

TEST_CASE("impair: determinism and per-seed independence") {
  const auto in = clean(Scheme::QAM16, 7);
  ChannelConfig a;
  a.fading_seed = 11;
  ChannelConfig b = a;
  b.fading_seed = 12;
  CHECK(impair(in, a).samples == impair(in, a).samples);
  CHECK(impair(in, a).samples != impair(in, b).samples);
}

TEST_CASE("empirical SNR after impairment matches the target") {
  for (double target : {-20.0, 0.0, 30.0}) {
    double acc = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      ChannelConfig cfg;
      cfg.snr_db = target;
      Rng rng(seed);
      const auto faded = apply_rician(clean(Scheme::QPSK, seed), cfg, rng);
      const auto noisy = apply_awgn(faded, target, rng);
      double pn = 0.0;
      for (std::size_t i = 0; i < faded.samples.size(); ++i) pn += std::norm(noisy.samples[i] - faded.samples[i]);
      pn /= static_cast<double>(faded.samples.size());
      acc += 10.0 * std::log10(oracle::mean_power(faded.samples) / pn);
    }
    CHECK(std::abs(acc / 100.0 - target) < 0.3);
  }
}

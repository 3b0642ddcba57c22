#include "eyemod/channel.hpp"

#include <cmath>
#include <numbers>

#include "eyemod/error.hpp"

namespace eyemod {

namespace {

constexpr double kPi = std::numbers::pi;

cplx complex_gaussian(Rng& rng, double variance) {
  std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

double sinc(double x) { return std::abs(x) < 1e-12 ? 1.0 : std::sin(kPi * x) / (kPi * x); }

}  // namespace

void ChannelConfig::validate() const {
  if (path_delays.empty() || path_delays.size() != path_gains_db.size()) {
    throw Error(ErrorCode::InvalidArgument, "path_delays and path_gains_db must match in length");
  }
  if (path_delays.front() != 0.0) {
    throw Error(ErrorCode::InvalidArgument, "first path delay must be 0");
  }
  for (std::size_t i = 1; i < path_delays.size(); ++i) {
    if (path_delays[i] < path_delays[i - 1]) {
      throw Error(ErrorCode::InvalidArgument, "path delays must be sorted ascending");
    }
  }
  if (!(k_factor >= 0.0)) throw Error(ErrorCode::InvalidArgument, "k_factor must be >= 0");
}

std::vector<cplx> draw_fading_taps(const ChannelConfig& cfg, Rng& rng) {
  std::vector<cplx> taps(cfg.path_delays.size());
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * kPi);
  const double los_phase = uphase(rng);
  if (std::isinf(cfg.k_factor)) {
    taps[0] = std::polar(1.0, los_phase);
  } else {
    const double k = cfg.k_factor;
    taps[0] = std::polar(std::sqrt(k / (k + 1.0)), los_phase) + complex_gaussian(rng, 1.0 / (k + 1.0));
  }
  for (std::size_t p = 1; p < taps.size(); ++p) taps[p] = complex_gaussian(rng, 1.0);
  return taps;
}

std::vector<cplx> delay_signal(const std::vector<cplx>& x, double delay) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<cplx> out(x.size());
  const double whole = std::floor(delay);
  const double frac = delay - whole;
  const auto shift = static_cast<std::ptrdiff_t>(whole);
  if (frac == 0.0) {
    for (std::ptrdiff_t i = shift; i < n; ++i) out[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i - shift)];
    return out;
  }
  // out[i] = sum_m h[m] x[i - shift - m], m in [-(H-1), H], with
  // h[m] = sinc(m - frac) * hann(m - frac), normalized to unit DC gain.
  constexpr int kHalf = kFractionalDelayHalfTaps;
  std::vector<double> h;
  double sum = 0.0;
  for (int m = -(kHalf - 1); m <= kHalf; ++m) {
    const double t = m - frac;
    const double w = 0.5 * (1.0 + std::cos(kPi * t / kHalf));
    h.push_back(sinc(t) * w);
    sum += h.back();
  }
  for (auto& v : h) v /= sum;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    cplx acc{};
    for (int m = -(kHalf - 1); m <= kHalf; ++m) {
      const std::ptrdiff_t src = i - shift - m;
      if (src < 0 || src >= n) continue;
      acc += x[static_cast<std::size_t>(src)] * h[static_cast<std::size_t>(m + kHalf - 1)];
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

ComplexFrame apply_rician(const ComplexFrame& frame, const ChannelConfig& cfg, Rng& rng) {
  cfg.validate();
  for (double d : cfg.path_delays) {
    if (d >= static_cast<double>(frame.samples.size())) {
      throw Error(ErrorCode::DelayTooLarge, "path delay exceeds frame length");
    }
  }
  const auto taps = draw_fading_taps(cfg, rng);
  ComplexFrame out = frame;
  std::fill(out.samples.begin(), out.samples.end(), cplx{});
  for (std::size_t p = 0; p < taps.size(); ++p) {
    const double amplitude = std::pow(10.0, cfg.path_gains_db[p] / 20.0);
    const auto delayed = delay_signal(frame.samples, cfg.path_delays[p]);
    const cplx g = amplitude * taps[p];
    for (std::size_t i = 0; i < delayed.size(); ++i) out.samples[i] += g * delayed[i];
  }
  const double p = out.mean_power();
  if (p > 0.0) {
    const double s = 1.0 / std::sqrt(p);
    for (auto& v : out.samples) v *= s;
  }
  return out;
}

ComplexFrame apply_awgn(const ComplexFrame& frame, double snr_db, Rng& rng) {
  const double p = frame.mean_power();
  if (!(p > 0.0)) throw Error(ErrorCode::ZeroPower, "cannot calibrate noise on a zero-power frame");
  ComplexFrame out = frame;
  if (std::isinf(snr_db) && snr_db > 0) return out;
  const double noise_power = p / std::pow(10.0, snr_db / 10.0);
  std::normal_distribution<double> n(0.0, std::sqrt(noise_power / 2.0));
  for (auto& v : out.samples) {
    const double re = n(rng);
    const double im = n(rng);
    v += cplx(re, im);
  }
  out.snr_db = snr_db;
  return out;
}

ComplexFrame impair(const ComplexFrame& frame, const ChannelConfig& cfg, Rng& rng) {
  return apply_awgn(apply_rician(frame, cfg, rng), cfg.snr_db, rng);
}

ComplexFrame impair(const ComplexFrame& frame, const ChannelConfig& cfg) {
  Rng fading(derive_seed(cfg.fading_seed, 1));
  Rng noise(derive_seed(cfg.fading_seed, 2));
  return apply_awgn(apply_rician(frame, cfg, fading), cfg.snr_db, noise);
}

}  // namespace eyemod

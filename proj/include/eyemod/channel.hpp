#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "eyemod/rng.hpp"
#include "eyemod/synth.hpp"

namespace eyemod {

struct ChannelConfig {
  double snr_db = 10.0;
  std::vector<double> path_delays{0.0, 1.8, 3.4};  // samples
  std::vector<double> path_gains_db{0.0, -2.0, -10.0};
  /// LOS-to-scattered power ratio of the first tap; +inf gives a pure LOS tap.
  double k_factor = 4.0;
  std::uint64_t fading_seed = 0;

  void validate() const;
};

/// Sentinel SNR meaning "no noise".
inline constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

/// Half-length of the Hann-windowed sinc interpolator (16 taps total).
inline constexpr int kFractionalDelayHalfTaps = 8;

/// Unit-mean-power tap coefficients before path gains: tap 0 is Rician with
/// the configured K-factor and a uniformly random LOS phase, the rest are
/// Rayleigh.
std::vector<cplx> draw_fading_taps(const ChannelConfig& cfg, Rng& rng);

/// Delays a sequence by a non-negative, possibly fractional number of
/// samples. Samples before the start are treated as zero.
std::vector<cplx> delay_signal(const std::vector<cplx>& x, double delay);

/// Block-fading multipath; output renormalized to unit mean power.
ComplexFrame apply_rician(const ComplexFrame& frame, const ChannelConfig& cfg, Rng& rng);

/// Adds circular Gaussian noise of power P / 10^(snr_db/10), P being the
/// measured frame power. snr_db == +inf returns the frame unchanged.
ComplexFrame apply_awgn(const ComplexFrame& frame, double snr_db, Rng& rng);

/// apply_rician followed by apply_awgn at cfg.snr_db.
ComplexFrame impair(const ComplexFrame& frame, const ChannelConfig& cfg, Rng& rng);
/// Seeds fading and noise streams from cfg.fading_seed.
ComplexFrame impair(const ComplexFrame& frame, const ChannelConfig& cfg);

}  // namespace eyemod

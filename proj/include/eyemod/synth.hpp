#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eyemod/rng.hpp"

namespace eyemod {

using cplx = std::complex<double>;

/// The 14 modulation classes. Enumerator values are the canonical class ids
/// used by datasets, checkpoints and reports.
enum class Scheme : std::uint8_t {
  BFM,
  AMSSB,
  AMDSB,
  QAM16,
  QAM64,
  QAM128,
  QAM256,
  QPSK,
  BPSK,
  PSK8,
  PSK16,
  GFSK,
  CPFSK,
  PAM4,
};

inline constexpr std::size_t kSchemeCount = 14;

enum class SchemeKind { Digital, Analog };

const std::array<Scheme, kSchemeCount>& all_schemes() noexcept;
SchemeKind scheme_kind(Scheme s) noexcept;
std::string_view scheme_name(Scheme s) noexcept;
/// Case-insensitive lookup of a scheme by name.
std::optional<Scheme> parse_scheme(std::string_view name);
/// Comma-separated list of every valid name, in canonical order.
std::string scheme_name_list();

/// Linear schemes are the ones demodulate_linear can slice.
bool is_linear(Scheme s) noexcept;

struct FrameSpec {
  double sample_rate = 200'000.0;
  std::size_t frame_len = 1024;
  std::size_t sps = 8;
  /// Metadata only. Zero selects 902 MHz (digital) or 100 MHz (analog).
  double center_freq = 0.0;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument unless frame_len is a positive multiple of sps
  /// and sps >= 2.
  void validate() const;
};

double default_center_freq(Scheme s) noexcept;

struct ComplexFrame {
  std::vector<cplx> samples;
  Scheme scheme = Scheme::BPSK;
  FrameSpec spec;
  std::optional<double> snr_db;  // nullopt for a clean frame

  double mean_power() const noexcept;
};

/// Waveform constants for the non-linear and analog generators.
struct WaveformParams {
  double rrc_rolloff = 0.35;
  std::size_t rrc_span_symbols = 8;
  double gfsk_bt = 0.35;
  double gfsk_index = 0.5;
  double cpfsk_index = 0.5;
  std::array<double, 3> message_tones_hz{1000.0, 3500.0, 7000.0};
  double fm_deviation_hz = 50'000.0;
};

inline constexpr WaveformParams kWaveform{};

/// Unit-average-energy constellation of a digital linear scheme.
std::span<const cplx> constellation(Scheme s);

/// Uniform draws from the scheme's constellation. GFSK/CPFSK draw from the
/// binary alphabet {-1, +1}. Throws NotDigital for analog schemes.
std::vector<cplx> generate_symbols(Scheme s, std::size_t count, Rng& rng);

/// Root-raised-cosine taps, unit energy, length span*sps + 1.
std::vector<double> rrc_taps(double rolloff, std::size_t span_symbols, std::size_t sps);

struct ModulatedFrame {
  ComplexFrame frame;
  std::vector<cplx> symbols;  // empty for analog schemes
};

/// Clean, unit-power frame. Linear schemes are pulse shaped cyclically so
/// that symbol k sits at sample k*sps with no filter transient.
ModulatedFrame modulate_with_symbols(Scheme s, const FrameSpec& spec, Rng& rng);
ComplexFrame modulate(Scheme s, const FrameSpec& spec, Rng& rng);
/// Seeds the generator from spec.seed.
ComplexFrame modulate(Scheme s, const FrameSpec& spec);

/// Matched filter, symbol-centre sampling, gain recovery and
/// nearest-point slicing. Throws NotLinear for FSK and analog schemes.
std::vector<cplx> demodulate_linear(const ComplexFrame& frame);

}  // namespace eyemod

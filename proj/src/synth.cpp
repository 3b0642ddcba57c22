#include "eyemod/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "eyemod/error.hpp"

namespace eyemod {

namespace {

constexpr double kPi = std::numbers::pi;

struct SchemeInfo {
  Scheme scheme;
  std::string_view name;
  SchemeKind kind;
};

constexpr std::array<SchemeInfo, kSchemeCount> kSchemes{{
    {Scheme::BFM, "BFM", SchemeKind::Analog},
    {Scheme::AMSSB, "AMSSB", SchemeKind::Analog},
    {Scheme::AMDSB, "AMDSB", SchemeKind::Analog},
    {Scheme::QAM16, "QAM16", SchemeKind::Digital},
    {Scheme::QAM64, "QAM64", SchemeKind::Digital},
    {Scheme::QAM128, "QAM128", SchemeKind::Digital},
    {Scheme::QAM256, "QAM256", SchemeKind::Digital},
    {Scheme::QPSK, "QPSK", SchemeKind::Digital},
    {Scheme::BPSK, "BPSK", SchemeKind::Digital},
    {Scheme::PSK8, "PSK8", SchemeKind::Digital},
    {Scheme::PSK16, "PSK16", SchemeKind::Digital},
    {Scheme::GFSK, "GFSK", SchemeKind::Digital},
    {Scheme::CPFSK, "CPFSK", SchemeKind::Digital},
    {Scheme::PAM4, "PAM4", SchemeKind::Digital},
}};

const SchemeInfo& info(Scheme s) { return kSchemes[static_cast<std::size_t>(s)]; }

std::vector<cplx> normalized(std::vector<cplx> pts) {
  double energy = 0.0;
  for (const auto& p : pts) energy += std::norm(p);
  const double scale = 1.0 / std::sqrt(energy / static_cast<double>(pts.size()));
  for (auto& p : pts) p *= scale;
  return pts;
}

std::vector<cplx> psk_points(int order, double offset) {
  std::vector<cplx> pts;
  for (int k = 0; k < order; ++k) pts.push_back(std::polar(1.0, offset + 2.0 * kPi * k / order));
  return pts;
}

std::vector<cplx> square_qam(int side) {
  std::vector<cplx> pts;
  for (int i = 0; i < side; ++i) {
    for (int q = 0; q < side; ++q) {
      pts.emplace_back(2.0 * i - (side - 1), 2.0 * q - (side - 1));
    }
  }
  return normalized(std::move(pts));
}

// 12x12 odd-integer grid with the 2x2 corner blocks removed.
std::vector<cplx> cross_qam128() {
  std::vector<cplx> pts;
  for (int i = -11; i <= 11; i += 2) {
    for (int q = -11; q <= 11; q += 2) {
      if (std::abs(i) > 7 && std::abs(q) > 7) continue;
      pts.emplace_back(i, q);
    }
  }
  return normalized(std::move(pts));
}

const std::vector<cplx>& table(Scheme s) {
  static const std::vector<cplx> bpsk = {cplx(1, 0), cplx(-1, 0)};
  static const std::vector<cplx> qpsk = psk_points(4, kPi / 4);
  static const std::vector<cplx> psk8 = psk_points(8, 0.0);
  static const std::vector<cplx> psk16 = psk_points(16, 0.0);
  static const std::vector<cplx> qam16 = square_qam(4);
  static const std::vector<cplx> qam64 = square_qam(8);
  static const std::vector<cplx> qam128 = cross_qam128();
  static const std::vector<cplx> qam256 = square_qam(16);
  static const std::vector<cplx> pam4 =
      normalized({cplx(-3, 0), cplx(-1, 0), cplx(1, 0), cplx(3, 0)});
  switch (s) {
    case Scheme::BPSK: return bpsk;
    case Scheme::QPSK: return qpsk;
    case Scheme::PSK8: return psk8;
    case Scheme::PSK16: return psk16;
    case Scheme::QAM16: return qam16;
    case Scheme::QAM64: return qam64;
    case Scheme::QAM128: return qam128;
    case Scheme::QAM256: return qam256;
    case Scheme::PAM4: return pam4;
    case Scheme::GFSK:
    case Scheme::CPFSK: return bpsk;
    default: break;
  }
  throw Error(ErrorCode::NotDigital, std::string(scheme_name(s)) + " has no constellation");
}

void normalize_power(std::vector<cplx>& x) {
  double p = 0.0;
  for (const auto& v : x) p += std::norm(v);
  p /= static_cast<double>(x.size());
  if (p <= 0.0) return;
  const double g = 1.0 / std::sqrt(p);
  for (auto& v : x) v *= g;
}

// Circular convolution of symbols placed every sps samples with a centred,
// odd-length filter.
std::vector<cplx> cyclic_shape(std::span<const cplx> symbols, std::span<const double> taps,
                               std::size_t sps) {
  const std::size_t n = symbols.size() * sps;
  const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < symbols.size(); ++k) {
    const auto centre = static_cast<std::ptrdiff_t>(k * sps);
    for (std::ptrdiff_t m = -half; m <= half; ++m) {
      auto idx = (centre + m) % static_cast<std::ptrdiff_t>(n);
      if (idx < 0) idx += static_cast<std::ptrdiff_t>(n);
      out[static_cast<std::size_t>(idx)] += symbols[k] * taps[static_cast<std::size_t>(m + half)];
    }
  }
  return out;
}

std::vector<double> gaussian_taps(double bt, std::size_t span_symbols, std::size_t sps) {
  const std::size_t len = span_symbols * sps + 1;
  const double centre = static_cast<double>(len - 1) / 2.0;
  const double alpha = std::sqrt(std::log(2.0) / 2.0) / bt;
  std::vector<double> taps(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double t = (static_cast<double>(i) - centre) / static_cast<double>(sps);
    taps[i] = std::exp(-(kPi * t / alpha) * (kPi * t / alpha));
  }
  const double sum = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (auto& t : taps) t /= sum;
  return taps;
}

// Binary continuous-phase FSK. With a Gaussian frequency pulse this is GFSK,
// with the raw NRZ pulse it is CPFSK.
std::vector<cplx> fsk_frame(const FrameSpec& spec, double index, std::optional<double> bt, Rng& rng,
                            std::vector<cplx>& symbols) {
  const std::size_t n_sym = spec.frame_len / spec.sps;
  constexpr std::size_t kLead = 4;
  const auto bits = generate_symbols(Scheme::CPFSK, n_sym + 2 * kLead, rng);
  std::vector<double> nrz(bits.size() * spec.sps);
  for (std::size_t i = 0; i < nrz.size(); ++i) nrz[i] = bits[i / spec.sps].real();

  std::vector<double> freq = nrz;
  if (bt) {
    const auto taps = gaussian_taps(*bt, 4, spec.sps);
    const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
    for (std::size_t n = 0; n < nrz.size(); ++n) {
      double acc = 0.0;
      for (std::ptrdiff_t m = -half; m <= half; ++m) {
        const auto idx = static_cast<std::ptrdiff_t>(n) - m;
        const double v = (idx < 0) ? nrz.front()
                         : (idx >= static_cast<std::ptrdiff_t>(nrz.size()))
                             ? nrz.back()
                             : nrz[static_cast<std::size_t>(idx)];
        acc += taps[static_cast<std::size_t>(m + half)] * v;
      }
      freq[n] = acc;
    }
  }

  std::uniform_real_distribution<double> uphase(0.0, 2.0 * kPi);
  double phase = uphase(rng);
  const double step = kPi * index / static_cast<double>(spec.sps);
  std::vector<cplx> out;
  out.reserve(spec.frame_len);
  const std::size_t first = kLead * spec.sps;
  for (std::size_t n = 0; n < first + spec.frame_len; ++n) {
    phase += step * freq[n];
    if (n >= first) out.push_back(std::polar(1.0, phase));
  }
  symbols.assign(bits.begin() + kLead, bits.begin() + kLead + static_cast<std::ptrdiff_t>(n_sym));
  return out;
}

std::vector<cplx> analog_frame(Scheme s, const FrameSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * kPi);
  std::array<double, 3> phases{};
  for (auto& p : phases) p = uphase(rng);
  const auto& tones = kWaveform.message_tones_hz;

  std::vector<cplx> out(spec.frame_len);
  double fm_phase = 0.0;
  for (std::size_t n = 0; n < spec.frame_len; ++n) {
    const double t = static_cast<double>(n) / spec.sample_rate;
    double message = 0.0;
    cplx analytic{};
    for (std::size_t i = 0; i < tones.size(); ++i) {
      const double arg = 2.0 * kPi * tones[i] * t + phases[i];
      message += std::cos(arg) / 3.0;
      analytic += std::polar(1.0 / 3.0, arg);
    }
    switch (s) {
      case Scheme::BFM:
        fm_phase += 2.0 * kPi * kWaveform.fm_deviation_hz * message / spec.sample_rate;
        out[n] = std::polar(1.0, fm_phase);
        break;
      case Scheme::AMSSB: out[n] = analytic; break;  // upper sideband
      case Scheme::AMDSB: out[n] = cplx(message, 0.0); break;  // suppressed carrier
      default: break;
    }
  }
  return out;
}

cplx nearest(std::span<const cplx> points, cplx v) {
  cplx best = points.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    const double d = std::norm(v - p);
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

}  // namespace

const std::array<Scheme, kSchemeCount>& all_schemes() noexcept {
  static const std::array<Scheme, kSchemeCount> schemes = [] {
    std::array<Scheme, kSchemeCount> a{};
    for (std::size_t i = 0; i < kSchemeCount; ++i) a[i] = kSchemes[i].scheme;
    return a;
  }();
  return schemes;
}

SchemeKind scheme_kind(Scheme s) noexcept { return info(s).kind; }
std::string_view scheme_name(Scheme s) noexcept { return info(s).name; }

std::optional<Scheme> parse_scheme(std::string_view name) {
  for (const auto& si : kSchemes) {
    if (si.name.size() != name.size()) continue;
    bool same = true;
    for (std::size_t i = 0; i < name.size() && same; ++i) {
      same = std::toupper(static_cast<unsigned char>(name[i])) == si.name[i];
    }
    if (same) return si.scheme;
  }
  return std::nullopt;
}

std::string scheme_name_list() {
  std::string out;
  for (const auto& si : kSchemes) {
    if (!out.empty()) out += ", ";
    out += si.name;
  }
  return out;
}

bool is_linear(Scheme s) noexcept {
  return scheme_kind(s) == SchemeKind::Digital && s != Scheme::GFSK && s != Scheme::CPFSK;
}

void FrameSpec::validate() const {
  if (sps < 2) throw Error(ErrorCode::InvalidArgument, "sps must be >= 2");
  if (frame_len == 0 || frame_len % sps != 0) {
    throw Error(ErrorCode::InvalidArgument, "frame_len must be a positive multiple of sps");
  }
  if (!(sample_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "sample_rate must be > 0");
}

double default_center_freq(Scheme s) noexcept {
  return scheme_kind(s) == SchemeKind::Digital ? 902e6 : 100e6;
}

double ComplexFrame::mean_power() const noexcept {
  if (samples.empty()) return 0.0;
  double p = 0.0;
  for (const auto& v : samples) p += std::norm(v);
  return p / static_cast<double>(samples.size());
}

std::span<const cplx> constellation(Scheme s) {
  if (scheme_kind(s) != SchemeKind::Digital) {
    throw Error(ErrorCode::NotDigital, std::string(scheme_name(s)) + " is analog");
  }
  return table(s);
}

std::vector<cplx> generate_symbols(Scheme s, std::size_t count, Rng& rng) {
  if (scheme_kind(s) != SchemeKind::Digital) {
    throw Error(ErrorCode::NotDigital, std::string(scheme_name(s)) + " is analog");
  }
  if (count == 0) throw Error(ErrorCode::InvalidArgument, "symbol count must be > 0");
  const auto& pts = table(s);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  std::vector<cplx> out(count);
  for (auto& v : out) v = pts[pick(rng)];
  return out;
}

std::vector<double> rrc_taps(double rolloff, std::size_t span_symbols, std::size_t sps) {
  const std::size_t len = span_symbols * sps + 1;
  const double centre = static_cast<double>(len - 1) / 2.0;
  const double b = rolloff;
  std::vector<double> taps(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double t = (static_cast<double>(i) - centre) / static_cast<double>(sps);
    double h;
    if (std::abs(t) < 1e-12) {
      h = 1.0 - b + 4.0 * b / kPi;
    } else if (b > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * b)) < 1e-9) {
      h = b / std::sqrt(2.0) *
          ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * b)) +
           (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * b)));
    } else {
      h = (std::sin(kPi * t * (1.0 - b)) + 4.0 * b * t * std::cos(kPi * t * (1.0 + b))) /
          (kPi * t * (1.0 - (4.0 * b * t) * (4.0 * b * t)));
    }
    taps[i] = h;
  }
  double energy = 0.0;
  for (double h : taps) energy += h * h;
  for (auto& h : taps) h /= std::sqrt(energy);
  return taps;
}

ModulatedFrame modulate_with_symbols(Scheme s, const FrameSpec& spec, Rng& rng) {
  spec.validate();
  ModulatedFrame out;
  out.frame.scheme = s;
  out.frame.spec = spec;
  if (out.frame.spec.center_freq <= 0.0) out.frame.spec.center_freq = default_center_freq(s);

  if (is_linear(s)) {
    out.symbols = generate_symbols(s, spec.frame_len / spec.sps, rng);
    const auto taps = rrc_taps(kWaveform.rrc_rolloff, kWaveform.rrc_span_symbols, spec.sps);
    out.frame.samples = cyclic_shape(out.symbols, taps, spec.sps);
  } else if (s == Scheme::GFSK) {
    out.frame.samples = fsk_frame(spec, kWaveform.gfsk_index, kWaveform.gfsk_bt, rng, out.symbols);
  } else if (s == Scheme::CPFSK) {
    out.frame.samples =
        fsk_frame(spec, kWaveform.cpfsk_index, std::nullopt, rng, out.symbols);
  } else {
    out.frame.samples = analog_frame(s, spec, rng);
  }
  normalize_power(out.frame.samples);
  return out;
}

ComplexFrame modulate(Scheme s, const FrameSpec& spec, Rng& rng) {
  return modulate_with_symbols(s, spec, rng).frame;
}

ComplexFrame modulate(Scheme s, const FrameSpec& spec) {
  Rng rng(spec.seed);
  return modulate(s, spec, rng);
}

std::vector<cplx> demodulate_linear(const ComplexFrame& frame) {
  if (!is_linear(frame.scheme)) {
    throw Error(ErrorCode::NotLinear,
                std::string(scheme_name(frame.scheme)) + " is not a linear scheme");
  }
  frame.spec.validate();
  const std::size_t sps = frame.spec.sps;
  const std::size_t n = frame.samples.size();
  if (n != frame.spec.frame_len) throw Error(ErrorCode::InvalidArgument, "frame length mismatch");
  const auto taps = rrc_taps(kWaveform.rrc_rolloff, kWaveform.rrc_span_symbols, sps);
  const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);

  std::vector<cplx> y(n / sps);
  for (std::size_t k = 0; k < y.size(); ++k) {
    cplx acc{};
    for (std::ptrdiff_t m = -half; m <= half; ++m) {
      auto idx = (static_cast<std::ptrdiff_t>(k * sps) + m) % static_cast<std::ptrdiff_t>(n);
      if (idx < 0) idx += static_cast<std::ptrdiff_t>(n);
      acc += frame.samples[static_cast<std::size_t>(idx)] * taps[static_cast<std::size_t>(m + half)];
    }
    y[k] = acc;
  }

  const auto points = constellation(frame.scheme);
  double power = 0.0;
  for (const auto& v : y) power += std::norm(v);
  const double g0 = std::sqrt(power / static_cast<double>(y.size()));
  if (!(g0 > 0.0)) return std::vector<cplx>(y.size(), points.front());

  // The transmitter normalizes each frame empirically, so the symbol scale is
  // only known up to the sample power of the drawn symbols. Search the scale
  // around the power estimate, then refine by least squares on the decisions.
  auto residual = [&](double g) {
    double err = 0.0;
    for (const auto& v : y) err += std::norm(v - g * nearest(points, v / g));
    return err;
  };
  double gain = g0;
  double best = std::numeric_limits<double>::infinity();
  constexpr int kSteps = 120;
  for (int i = 0; i <= kSteps; ++i) {
    const double g = g0 * (0.85 + 0.30 * i / kSteps);
    const double r = residual(g);
    if (r < best) {
      best = r;
      gain = g;
    }
  }
  for (int iter = 0; iter < 4; ++iter) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& v : y) {
      const cplx d = nearest(points, v / gain);
      num += (std::conj(d) * v).real();
      den += std::norm(d);
    }
    if (den > 0.0 && num > 0.0) gain = num / den;
  }

  std::vector<cplx> decisions(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) decisions[k] = nearest(points, y[k] / gain);
  return decisions;
}

}  // namespace eyemod

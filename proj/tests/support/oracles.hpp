#pragma once

// Reference computations kept apart from the library so tests never grade
// the code against itself.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

inline double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Gray-independent QPSK symbol error probability at a per-symbol Es/N0.
inline double qpsk_ser(double es_n0_linear) {
  const double q = q_function(std::sqrt(es_n0_linear));
  return 2.0 * q - q * q;
}

inline double rayleigh_cdf(double r, double omega = 1.0) {
  return r <= 0.0 ? 0.0 : 1.0 - std::exp(-r * r / omega);
}

inline double rician_pdf(double r, double k, double omega = 1.0) {
  if (r <= 0.0) return 0.0;
  const double a = (k + 1.0) / omega;
  const double x = 2.0 * r * std::sqrt(k * a);
  // I0(x) e^{-x} keeps the product finite for large arguments.
  const double i0_scaled = std::cyl_bessel_i(0.0, x) * std::exp(-x);
  return 2.0 * a * r * i0_scaled * std::exp(x - k - a * r * r);
}

/// CDF by composite Simpson integration of the density.
inline double rician_cdf(double r, double k, double omega = 1.0) {
  if (r <= 0.0) return 0.0;
  const int n = 2000;
  const double h = r / n;
  double s = rician_pdf(0.0, k, omega) + rician_pdf(r, k, omega);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * rician_pdf(i * h, k, omega);
  return std::min(1.0, s * h / 3.0);
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

/// Asymptotic p-value with the Stephens small-sample correction.
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 1e-3) return 1.0;
  double p = 0.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double mean_power(const std::vector<std::complex<double>>& x) {
  double s = 0.0;
  for (const auto& z : x) s += std::norm(z);
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

/// Direct-form circular convolution.
inline std::vector<std::complex<double>> circular_filter(const std::vector<std::complex<double>>& x,
                                                         const std::vector<double>& taps) {
  const std::size_t n = x.size();
  const std::size_t half = taps.size() / 2;
  std::vector<std::complex<double>> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::complex<double> acc = 0.0;
    for (std::size_t k = 0; k < taps.size(); ++k) {
      acc += taps[k] * x[(i + n + half - k) % n];
    }
    y[i] = acc;
  }
  return y;
}

/// Gray-level histogram entropy in bits, counting levels with a sorted copy.
inline double entropy(const std::vector<float>& pixels) {
  std::vector<int> levels;
  for (float v : pixels) levels.push_back(static_cast<int>(std::floor(static_cast<double>(v) * 255.0 + 0.5)));
  std::sort(levels.begin(), levels.end());
  double h = 0.0;
  const double n = static_cast<double>(levels.size());
  for (std::size_t i = 0; i < levels.size();) {
    std::size_t j = i;
    while (j < levels.size() && levels[j] == levels[i]) ++j;
    const double p = static_cast<double>(j - i) / n;
    h -= p * std::log2(p);
    i = j;
  }
  return h;
}

/// Binomial standard deviation of an accuracy estimate.
inline double accuracy_sigma(double p, std::size_t n) {
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

}  // namespace oracle

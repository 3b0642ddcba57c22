#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eyemod/channel.hpp"
#include "eyemod/classifier.hpp"
#include "eyemod/cli.hpp"
#include "eyemod/dataset.hpp"
#include "eyemod/eyepipe.hpp"
#include "eyemod/rng.hpp"
#include "eyemod/synth.hpp"
#include "support/oracles.hpp"

using namespace eyemod;
namespace fs = std::filesystem;

namespace {

constexpr double kSnrToleranceDb = 0.3;
constexpr double kSnrRuntimeS = 30.0;
constexpr double kRoundTripRuntimeS = 60.0;
constexpr std::size_t kRoundTripSymbols = 10000;
constexpr std::size_t kFadingDraws = 10000;
constexpr double kKsMinP = 0.01;
constexpr double kGradRelTol = 1e-3;
constexpr std::size_t kGradCoordsPerLayer = 20;
constexpr double kGradStep = 1e-4;
constexpr double kGradRuntimeS = 60.0;
constexpr double kDeskMinAccuracy = 0.90;
constexpr double kDeskRuntimeS = 20.0 * 60.0;
constexpr std::size_t kDeskFrames = 200;
constexpr double kChanceSigmas = 3.0;
constexpr std::size_t kOverfitSteps = 50;
constexpr std::size_t kOverfitMaxNonMonotone = 2;
constexpr double kOverfitMaxLoss = 0.01;
constexpr double kOverfitLearningRate = 0.03;

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

const std::vector<Scheme> kDeskSchemes{Scheme::BPSK, Scheme::QPSK, Scheme::QAM16, Scheme::PAM4};

DatasetPlan desk_plan(std::vector<double> snrs) {
  DatasetPlan p;
  p.schemes = kDeskSchemes;
  p.snr_grid_db = std::move(snrs);
  p.frames_per_class_per_snr = kDeskFrames;
  p.pipeline = {8, 64, 128, 64, 128};
  return p;
}

ModelConfig desk_model(const DatasetContainer& d) {
  ModelConfig m;
  m.height = d.height;
  m.width = d.width;
  m.class_count = d.class_names.size();
  return m;
}

Verdict snr_calibration() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (double target : {-20.0, -10.0, 0.0, 10.0, 20.0, 30.0}) {
    double acc = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      FrameSpec spec;
      spec.seed = seed;
      const auto clean = modulate(Scheme::QPSK, spec);
      ChannelConfig cfg;
      cfg.snr_db = target;
      cfg.fading_seed = seed;
      const auto noisy = impair(clean, cfg);
      Rng fading(derive_seed(seed, 1));
      const auto faded = apply_rician(clean, cfg, fading);
      double pn = 0.0;
      for (std::size_t i = 0; i < faded.samples.size(); ++i) pn += std::norm(noisy.samples[i] - faded.samples[i]);
      pn /= static_cast<double>(faded.samples.size());
      acc += 10.0 * std::log10(oracle::mean_power(faded.samples) / pn);
    }
    const double mean = acc / 100.0;
    ok &= std::abs(mean - target) <= kSnrToleranceDb;
    detail += fmt("%s%g->%.3f", detail.empty() ? "" : " ", target, mean);
  }
  const double secs = seconds_since(t0);
  ok &= secs < kSnrRuntimeS;
  return {ok, "mean empirical SNR dB " + detail + fmt(" (tol %.1f, %.1fs < %.0fs)", kSnrToleranceDb, secs, kSnrRuntimeS)};
}

std::size_t symbol_errors(const std::vector<cplx>& got, const std::vector<cplx>& want) {
  std::size_t e = 0;
  for (std::size_t i = 0; i < want.size(); ++i) e += std::abs(got[i] - want[i]) > 1e-9;
  return e;
}

Verdict modulation_round_trip() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  std::size_t schemes = 0;
  for (Scheme s : all_schemes()) {
    if (!is_linear(s)) continue;
    ++schemes;
    std::size_t noisy_errors = 0, clean_errors = 0, total = 0;
    for (std::uint64_t seed = 1; total < kRoundTripSymbols; ++seed) {
      FrameSpec spec;
      Rng rng(seed);
      const auto m = modulate_with_symbols(s, spec, rng);
      clean_errors += symbol_errors(demodulate_linear(m.frame), m.symbols);
      noisy_errors += symbol_errors(demodulate_linear(apply_awgn(m.frame, 30.0, rng)), m.symbols);
      total += m.symbols.size();
    }
    ok &= noisy_errors == 0 && clean_errors == 0;
    if (noisy_errors || clean_errors) {
      detail += fmt(" %s:%zu/%zu", std::string(scheme_name(s)).c_str(), noisy_errors, clean_errors);
    }
  }
  const double secs = seconds_since(t0);
  ok &= schemes == 9 && secs < kRoundTripRuntimeS;
  return {ok, fmt("%zu linear schemes, >=%zu symbols each at 30 dB and clean, errors%s (%.1fs < %.0fs)", schemes,
                  kRoundTripSymbols, detail.empty() ? " none" : detail.c_str(), secs, kRoundTripRuntimeS)};
}

Verdict fading_statistics() {
  Rng rng(20240601);
  ChannelConfig cfg;
  std::vector<double> los, nlos1, nlos2;
  for (std::size_t i = 0; i < kFadingDraws; ++i) {
    const auto taps = draw_fading_taps(cfg, rng);
    los.push_back(std::abs(taps[0]));
    nlos1.push_back(std::abs(taps[1]));
    nlos2.push_back(std::abs(taps[2]));
  }
  const double k = cfg.k_factor;
  const double p_los = oracle::ks_pvalue(oracle::ks_statistic(los, [k](double r) { return oracle::rician_cdf(r, k); }),
                                         los.size());
  const double p_n1 = oracle::ks_pvalue(oracle::ks_statistic(nlos1, [](double r) { return oracle::rayleigh_cdf(r); }), nlos1.size());
  const double p_n2 = oracle::ks_pvalue(oracle::ks_statistic(nlos2, [](double r) { return oracle::rayleigh_cdf(r); }), nlos2.size());
  const bool ok = p_los > kKsMinP && p_n1 > kKsMinP && p_n2 > kKsMinP;
  return {ok, fmt("KS p-values over %zu draws: LOS vs Rician K=%g %.3f, tap 2 vs Rayleigh %.3f, tap 3 vs Rayleigh %.3f "
                  "(need > %.2f)",
                  kFadingDraws, k, p_los, p_n1, p_n2, kKsMinP)};
}

Verdict pipeline_shape() {
  FrameSpec spec;
  spec.seed = 3;
  ChannelConfig cfg;
  cfg.snr_db = 10.0;
  cfg.fading_seed = 4;
  const auto frame = impair(modulate(Scheme::QAM16, spec), cfg);
  const auto [ti, tq] = fold_traces(frame, 8);
  const auto a = frame_to_tensor(frame);
  const auto b = frame_to_tensor(frame);
  const bool in_range = std::all_of(a.data.begin(), a.data.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
  DatasetPlan plan;
  plan.schemes = {Scheme::QPSK, Scheme::GFSK};
  plan.snr_grid_db = {0.0};
  plan.frames_per_class_per_snr = 10;
  const auto one = build(plan, 1);
  const auto four = build(plan, 4);
  const bool ok = a.height == 299 && a.width == 699 && a.data.size() == 299u * 699u * 2u && ti.n_traces() == 128 &&
                  tq.n_traces() == 128 && in_range && a == b && one == four && one.height == 299 && one.width == 699;
  return {ok, fmt("tensor %zux%zux%zu, traces I/Q %zu/%zu, range ok %d, rerun identical %d, 1 vs 4 workers identical %d",
                  a.height, a.width, a.data.size() / (a.height * a.width), ti.n_traces(), tq.n_traces(), in_range,
                  a == b, one == four)};
}

Verdict gradient_oracle() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.height = 8;
  cfg.width = 12;
  cfg.class_count = 3;
  cfg.stem_channels = 3;
  cfg.block_channels = {4, 5};
  cfg.init_seed = 5;
  auto p = init_params<double>(cfg);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& q : p.params) {
    if (q.name.starts_with("head") || q.name.find(".bn") != std::string::npos) {
      for (auto& v : q.value) v += n(rng);
    }
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(2 * 2 * 8 * 12);
  for (auto& v : x) v = u(rng);
  const std::vector<int> labels{1, 2};
  const auto lg = loss_and_grad<double>(p, x, 2, labels);
  double worst = 0.0;
  std::size_t checked = 0, layers = 0;
  bool enough = true;
  for (std::size_t i = 0; i < p.params.size(); ++i) {
    auto& val = p.params[i].value;
    std::vector<std::size_t> idx(val.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t probes = std::min(kGradCoordsPerLayer, val.size());
    enough &= probes == kGradCoordsPerLayer || probes == val.size();
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t j = idx[k];
      const double orig = val[j];
      val[j] = orig + kGradStep;
      const double up = loss_and_grad<double>(p, x, 2, labels).loss;
      val[j] = orig - kGradStep;
      const double dn = loss_and_grad<double>(p, x, 2, labels).loss;
      val[j] = orig;
      const double fd = (up - dn) / (2.0 * kGradStep);
      const double an = lg.grads[i][j];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
      ++checked;
    }
    ++layers;
  }
  const double secs = seconds_since(t0);
  const bool ok = worst < kGradRelTol && enough && secs < kGradRuntimeS;
  return {ok, fmt("%zu coordinates over %zu parameter tensors, worst relative error %.2e (< %.0e), %.1fs", checked,
                  layers, worst, kGradRelTol, secs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict dataset_arithmetic() {
  std::ostringstream out, err;
  const int code = cli::run({"dataset", "--dry-run"}, out, err);
  const bool echo = code == 0 && out.str().find("plan.records = 420000") != std::string::npos;
  const auto cell = cell_split_sizes(5000, SplitFractions{});
  const auto dir = fs::temp_directory_path() / "eyemod_acceptance";
  fs::create_directories(dir);
  DatasetPlan plan = desk_plan({10.0});
  plan.frames_per_class_per_snr = 50;
  const auto c = build(plan, 2);
  write(c, dir / "a.eyeamc");
  write(read(dir / "a.eyeamc"), dir / "b.eyeamc");
  const bool bytes = slurp(dir / "a.eyeamc") == slurp(dir / "b.eyeamc") &&
                     slurp(manifest_path(dir / "a.eyeamc")) == slurp(manifest_path(dir / "b.eyeamc"));
  const bool ok = echo && cell[0] == 3500 && cell[1] == 1000 && cell[2] == 500 && bytes;
  return {ok, fmt("default plan echo 420000 %d, 5000-frame cell %zu/%zu/%zu, write-read-write byte identical %d", echo,
                  cell[0], cell[1], cell[2], bytes)};
}

struct DeskRun {
  DatasetContainer data;
  TrainResult result;
  double build_s = 0.0;
  double train_s = 0.0;
};

DeskRun desk_run(std::vector<double> snrs) {
  DeskRun r;
  auto t0 = Clock::now();
  r.data = build(desk_plan(std::move(snrs)), default_worker_count());
  r.build_s = seconds_since(t0);
  t0 = Clock::now();
  r.result = train(desk_model(r.data), TrainConfig{}, r.data, [](const EpochMetrics& m) {
    std::printf("  epoch %2zu train_loss %.4f val_acc %.3f\n", m.epoch, m.train_loss, m.val_accuracy);
    std::fflush(stdout);
  });
  r.train_s = seconds_since(t0);
  return r;
}

Verdict desk_separability() {
  const auto r = desk_run({10.0});
  const auto ev = evaluate(r.result.params, r.data, Split::Test);
  const double secs = r.build_s + r.train_s;
  std::printf("  desk test confusion (rows true, cols predicted):\n");
  std::istringstream csv(ev.pooled.to_csv());
  for (std::string line; std::getline(csv, line);) std::printf("    %s\n", line.c_str());
  const bool ok = ev.accuracy >= kDeskMinAccuracy && secs < kDeskRuntimeS;
  return {ok, fmt("test accuracy %.4f over %llu frames (need >= %.2f), val %.4f, %.0fs (< %.0fs)", ev.accuracy,
                  static_cast<unsigned long long>(ev.pooled.total()), kDeskMinAccuracy,
                  r.result.metrics.back().val_accuracy, secs, kDeskRuntimeS)};
}

Verdict noise_monotonicity() {
  const auto r = desk_run({-20.0, 0.0, 30.0});
  const auto ev = evaluate(r.result.params, r.data, Split::Test);
  double low = 0.0, high = 0.0;
  std::uint64_t n_low = 0;
  for (const auto& m : ev.per_snr) {
    if (m.tag() == "-20") low = m.accuracy(), n_low = m.total();
    if (m.tag() == "30") high = m.accuracy();
  }
  const double chance = 1.0 / static_cast<double>(kDeskSchemes.size());
  const double bar = chance + kChanceSigmas * oracle::accuracy_sigma(chance, n_low);
  const bool ok = n_low > 0 && high >= low && low > bar;
  return {ok, fmt("mixed-SNR model: 30 dB %.4f >= -20 dB %.4f; -20 dB %.4f vs chance bar %.4f (%.2f + 3 sigma, n=%llu); "
                  "%.0fs",
                  high, low, low, bar, chance, static_cast<unsigned long long>(n_low), r.build_s + r.train_s)};
}

Verdict overfit_one_batch() {
  DatasetPlan plan = desk_plan({10.0});
  plan.frames_per_class_per_snr = 20;
  const auto data = build(plan, default_worker_count());
  auto stream = iterate(data, Split::Train, 32, 1);
  const auto batch = *stream.next();
  auto p = init_params<float>(desk_model(data));
  TrainConfig tc;
  tc.learning_rate = kOverfitLearningRate;
  std::vector<double> losses;
  for (std::size_t k = 0; k < kOverfitSteps; ++k) {
    const auto lg = loss_and_grad<float>(p, batch.pixels, batch.size, batch.labels);
    losses.push_back(lg.loss);
    sgdm_step(p, lg.grads, tc);
  }
  const double final_loss = loss_and_grad<float>(p, batch.pixels, batch.size, batch.labels).loss;
  losses.push_back(final_loss);
  std::size_t rises = 0;
  for (std::size_t k = 1; k < losses.size(); ++k) rises += losses[k] > losses[k - 1];
  const bool ok = rises <= kOverfitMaxNonMonotone && final_loss < kOverfitMaxLoss;
  return {ok, fmt("batch of %zu, %zu steps at lr %g: loss %.4f -> %.5f (need < %.2f), %zu increases (<= %zu)",
                  batch.size, kOverfitSteps, kOverfitLearningRate, losses.front(), final_loss, kOverfitMaxLoss, rises,
                  kOverfitMaxNonMonotone)};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::vector<std::string> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) strict = true;
    else only.emplace_back(argv[i]);
  }
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"snr-calibration", snr_calibration},
      {"modulation-round-trip", modulation_round_trip},
      {"fading-statistics", fading_statistics},
      {"pipeline-shape", pipeline_shape},
      {"gradient-oracle", gradient_oracle},
      {"dataset-arithmetic", dataset_arithmetic},
      {"overfit-one-batch", overfit_one_batch},
      {"desk-separability", desk_separability},
      {"noise-monotonicity", noise_monotonicity},
  };
  std::size_t passed = 0, ran = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    ++ran;
    std::printf("running %s\n", name);
    std::fflush(stdout);
    Verdict v{false, ""};
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    passed += v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", passed, ran);
  return strict && passed != ran ? 1 : 0;
}

#include "eyemod/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "eyemod/channel.hpp"
#include "eyemod/classifier.hpp"
#include "eyemod/dataset.hpp"
#include "eyemod/error.hpp"
#include "eyemod/eyepipe.hpp"
#include "eyemod/report.hpp"

namespace eyemod {

namespace {

constexpr char kFrameMagic[8] = {'E', 'Y', 'E', 'F', 'R', 'M', '1', '\n'};
constexpr std::uint32_t kFrameVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}

struct Reader {
  const std::string& buf;
  std::size_t pos;

  std::uint64_t take(int bytes) {
    if (buf.size() - pos < static_cast<std::size_t>(bytes)) throw Error(ErrorCode::Corrupt, "frame file is truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  double f64() { return std::bit_cast<double>(take(8)); }
  float f32() { return std::bit_cast<float>(u32()); }
};

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace

void write_frame_file(const ComplexFrame& frame, const std::filesystem::path& path) {
  std::string s(kFrameMagic, sizeof kFrameMagic);
  put_u32(s, kFrameVersion);
  put_u32(s, static_cast<std::uint32_t>(frame.scheme));
  put_u32(s, static_cast<std::uint32_t>(frame.spec.sps));
  put_u32(s, static_cast<std::uint32_t>(frame.samples.size()));
  const double fc = frame.spec.center_freq > 0.0 ? frame.spec.center_freq : default_center_freq(frame.scheme);
  put_u64(s, std::bit_cast<std::uint64_t>(frame.spec.sample_rate));
  put_u64(s, std::bit_cast<std::uint64_t>(fc));
  put_u64(s, std::bit_cast<std::uint64_t>(frame.snr_db.value_or(kCleanSnr)));
  put_u64(s, frame.spec.seed);
  for (const auto& z : frame.samples) {
    put_u32(s, std::bit_cast<std::uint32_t>(static_cast<float>(z.real())));
    put_u32(s, std::bit_cast<std::uint32_t>(static_cast<float>(z.imag())));
  }
  write_bytes(path, s);
}

ComplexFrame read_frame_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (buf.size() < sizeof kFrameMagic || std::memcmp(buf.data(), kFrameMagic, sizeof kFrameMagic) != 0) {
    throw Error(ErrorCode::Corrupt, path.string() + " is not a frame file");
  }
  Reader r{buf, sizeof kFrameMagic};
  if (r.u32() != kFrameVersion) throw Error(ErrorCode::UnsupportedVersion, "frame file version");
  ComplexFrame f;
  const auto id = r.u32();
  if (id >= kSchemeCount) throw Error(ErrorCode::Corrupt, "frame file scheme id out of range");
  f.scheme = static_cast<Scheme>(id);
  f.spec.sps = r.u32();
  const auto n = r.u32();
  f.spec.frame_len = n;
  f.spec.sample_rate = r.f64();
  f.spec.center_freq = r.f64();
  const double snr = r.f64();
  if (!std::isinf(snr)) f.snr_db = snr;
  f.spec.seed = r.take(8);
  f.samples.resize(n);
  for (auto& z : f.samples) {
    const float re = r.f32();
    z = {re, r.f32()};
  }
  if (r.pos != buf.size()) throw Error(ErrorCode::Corrupt, "trailing bytes in frame file");
  return f;
}

namespace cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Io:
    case ErrorCode::NotADataset:
    case ErrorCode::Corrupt:
    case ErrorCode::UnsupportedVersion:
      return kExitIo;
    case ErrorCode::Diverged:
      return kExitDiverged;
    default:
      return kExitUsage;
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& text, const char* what) {
  std::vector<double> out;
  for (const auto& s : split_list(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size()) throw UsageError(std::string("bad number '") + s + "' in " + what);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string(what) + " is empty");
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  for (double v : parse_doubles(text, what)) {
    if (!(v >= 1.0) || v != std::floor(v)) throw UsageError(std::string(what) + " must hold positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

Scheme scheme_or_throw(const std::string& name) {
  if (auto s = parse_scheme(name)) return *s;
  throw UsageError("unknown scheme '" + name + "'; valid names: " + scheme_name_list());
}

std::filesystem::path with_suffix(const std::string& base, const char* suffix) { return base + suffix; }

/// Writes to the console and keeps a copy for the run log.
class RunLog {
 public:
  explicit RunLog(std::ostream& out) : out_(out) {}
  void line(const std::string& s) {
    out_ << s << '\n';
    text_ += s + '\n';
  }
  void console_only(const std::string& s) { out_ << s << '\n'; }
  void save(const std::filesystem::path& path) const { write_bytes(path, text_); }

 private:
  std::ostream& out_;
  std::string text_;
};

void echo_config(RunLog& log, const CLI::App& sub) {
  log.line("# eyemod " + sub.get_name() + " resolved configuration");
  std::istringstream in(sub.config_to_str(true, false));
  std::string l;
  while (std::getline(in, l)) {
    if (!l.empty()) log.line(l);
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

GrayImage to_gray(const EyeImage& img) {
  GrayImage g{img.height, img.width, {}};
  g.pixels.reserve(img.pixels.size());
  for (float v : img.pixels) g.pixels.push_back(quantize(v));
  return g;
}

struct SynthOptions {
  std::string scheme;
  double snr = 10.0;
  std::uint64_t seed = 1;
  std::string out = "frame.eyefrm";
  bool render = false;
  std::size_t height = 299;
  std::size_t width = 699;
  std::size_t n_s = 8;
  std::size_t sps = 8;
  std::size_t frame_len = 1024;
  double k_factor = 4.0;
};

int cmd_synth(const CLI::App& sub, const SynthOptions& o, std::ostream& out) {
  const Scheme scheme = scheme_or_throw(o.scheme);
  RunLog log(out);
  echo_config(log, sub);
  FrameSpec spec;
  spec.sps = o.sps;
  spec.frame_len = o.frame_len;
  spec.seed = o.seed;
  spec.validate();
  ChannelConfig ch;
  ch.snr_db = o.snr;
  ch.k_factor = o.k_factor;
  ch.fading_seed = derive_seed(o.seed, 1);
  const ComplexFrame frame = impair(modulate(scheme, spec), ch);
  write_frame_file(frame, o.out);
  log.line("wrote " + o.out + " (" + std::to_string(frame.samples.size()) + " samples, " +
           std::string(scheme_name(scheme)) + ")");
  if (o.render) {
    const EyeTensor t = frame_to_tensor(frame, {o.n_s, o.height, o.width, o.height, o.width});
    for (auto ch_id : {IqChannel::I, IqChannel::Q}) {
      const EyeImage img = t.channel_image(ch_id);
      const auto path = with_suffix(o.out, ch_id == IqChannel::I ? ".I.pgm" : ".Q.pgm");
      write_pgm(path, to_gray(img));
      log.line("wrote " + path.string() + " entropy=" + fmt("%.6f", pixel_entropy(img)));
    }
  }
  log.save(with_suffix(o.out, ".log"));
  return kExitOk;
}

struct DatasetOptions {
  std::string classes = "all";
  std::string snrs = "-20,-10,0,10,20,30";
  std::size_t frames = 5000;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 2;
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
  std::size_t height = 299;
  std::size_t width = 699;
  std::size_t render_height = 0;
  std::size_t render_width = 0;
  std::size_t n_s = 8;
  std::size_t sps = 8;
  std::size_t frame_len = 1024;
  double k_factor = 4.0;
  std::size_t threads = 0;
  std::string out = "dataset.eyeamc";
  bool dry_run = false;
};

DatasetPlan make_plan(const DatasetOptions& o) {
  DatasetPlan plan;
  if (o.classes != "all") {
    plan.schemes.clear();
    for (const auto& name : split_list(o.classes)) plan.schemes.push_back(scheme_or_throw(name));
    if (plan.schemes.empty()) throw UsageError("classes is empty");
    std::sort(plan.schemes.begin(), plan.schemes.end());
  }
  plan.snr_grid_db = parse_doubles(o.snrs, "snrs");
  plan.frames_per_class_per_snr = o.frames;
  plan.split = {o.train, o.val, o.test};
  plan.global_seed = o.seed;
  plan.split_seed = o.split_seed;
  plan.frame.sps = o.sps;
  plan.frame.frame_len = o.frame_len;
  plan.channel.k_factor = o.k_factor;
  plan.pipeline.n_s = o.n_s;
  plan.pipeline.out_height = o.height;
  plan.pipeline.out_width = o.width;
  plan.pipeline.render_height = o.render_height ? o.render_height : o.height;
  plan.pipeline.render_width = o.render_width ? o.render_width : o.width;
  plan.validate();
  return plan;
}

std::string join_names(const std::vector<Scheme>& schemes) {
  std::string s;
  for (auto sc : schemes) s += (s.empty() ? "" : ",") + std::string(scheme_name(sc));
  return s;
}

int cmd_dataset(const CLI::App& sub, const DatasetOptions& o, std::ostream& out) {
  DatasetPlan plan = make_plan(o);
  RunLog log(out);
  echo_config(log, sub);
  const auto cell = cell_split_sizes(plan.frames_per_class_per_snr, plan.split);
  const std::size_t cells = plan.schemes.size() * plan.snr_grid_db.size();
  if (cell[0] == 0 || cell[1] == 0 || cell[2] == 0) {
    throw Error(ErrorCode::CellTooSmall, std::to_string(plan.frames_per_class_per_snr) +
                                             " frames per cell cannot fill three nonempty splits");
  }
  std::string snrs;
  for (double v : plan.snr_grid_db) snrs += (snrs.empty() ? "" : ",") + fmt("%g", v);
  log.line("plan.classes = " + join_names(plan.schemes));
  log.line("plan.snrs_db = " + snrs);
  log.line("plan.frames_per_cell = " + std::to_string(plan.frames_per_class_per_snr));
  log.line("plan.records = " + std::to_string(plan.total_records()));
  log.line("plan.split = " + std::to_string(cell[0] * cells) + "/" + std::to_string(cell[1] * cells) + "/" +
           std::to_string(cell[2] * cells));
  log.line("plan.tensor = " + std::to_string(plan.pipeline.out_height) + "x" +
           std::to_string(plan.pipeline.out_width) + "x2");
  log.line("plan.payload_bytes = " + std::to_string(plan.payload_bytes()));
  if (o.dry_run) return kExitOk;

  const auto t0 = std::chrono::steady_clock::now();
  const auto container = build(plan, o.threads ? o.threads : default_worker_count());
  write(container, o.out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& m = *container.manifest;
  log.line("wrote " + o.out + ": " + std::to_string(container.count()) + " records, split " +
           std::to_string(m.train.size()) + "/" + std::to_string(m.val.size()) + "/" +
           std::to_string(m.test.size()));
  log.console_only("wall time " + fmt("%.2f", secs) + " s");
  log.save(with_suffix(o.out, ".log"));
  return kExitOk;
}

struct TrainOptions {
  std::string data;
  std::string out = "model.eyenet";
  std::string metrics;
  double lr = 0.001;
  double momentum = 0.9;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  std::uint64_t shuffle_seed = 1;
  std::uint64_t init_seed = 1;
  double init_gain = ModelConfig{}.init_gain;
  std::size_t stem = 8;
  std::string blocks = "16,32,64";
  bool residual = true;
};

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string s = "epoch,train_loss,val_acc\n";
  for (const auto& m : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", m.epoch, m.train_loss, m.val_accuracy);
    s += line;
  }
  return s;
}

int cmd_train(const CLI::App& sub, const TrainOptions& o, std::ostream& out, std::ostream& err) {
  RunLog log(out);
  echo_config(log, sub);
  const auto data = read(o.data);
  ModelConfig mc;
  mc.height = data.height;
  mc.width = data.width;
  mc.class_count = data.class_names.size();
  mc.stem_channels = o.stem;
  mc.block_channels = parse_sizes(o.blocks, "blocks");
  mc.residual = o.residual;
  mc.init_seed = o.init_seed;
  mc.init_gain = o.init_gain;
  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.momentum = o.momentum;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.shuffle_seed = o.shuffle_seed;
  const std::filesystem::path metrics_path = o.metrics.empty() ? with_suffix(o.out, ".metrics.csv") : std::filesystem::path(o.metrics);

  std::vector<EpochMetrics> rows;
  try {
    const auto result = train(mc, tc, data, [&](const EpochMetrics& m) {
      rows.push_back(m);
      write_bytes(metrics_path, metrics_csv(rows));
      log.line("epoch " + std::to_string(m.epoch) + "/" + std::to_string(tc.epochs) +
               " train_loss=" + fmt("%.6f", m.train_loss) + " val_acc=" + fmt("%.4f", m.val_accuracy));
    });
    save_checkpoint(result.params, o.out);
    log.line("wrote " + o.out + " after " + std::to_string(result.steps) + " steps");
  } catch (const TrainingDiverged& e) {
    write_bytes(metrics_path, metrics_csv(e.partial_metrics()));
    log.line(std::string("diverged: ") + e.what());
    log.save(with_suffix(o.out, ".log"));
    err << "error: " << e.what() << " (partial metrics kept in " << metrics_path.string() << ")\n";
    return kExitDiverged;
  }
  log.save(with_suffix(o.out, ".log"));
  return kExitOk;
}

struct EvalOptions {
  std::string data;
  std::string checkpoint;
  std::string report_dir = "report";
  std::string split = "test";
};

int cmd_eval(const CLI::App& sub, const EvalOptions& o, std::ostream& out) {
  const auto split_id = parse_split(o.split);
  if (!split_id) throw UsageError("unknown split '" + o.split + "'; valid: train, val, test");
  const auto data = read(o.data);
  const auto params = load_checkpoint(o.checkpoint);
  if (params.class_names != data.class_names) {
    throw UsageError("checkpoint/dataset disagreement: checkpoint classifies " +
                     std::to_string(params.class_names.size()) + " classes but the dataset has " +
                     std::to_string(data.class_names.size()) + " (class tables must match)");
  }
  if (params.config.height != data.height || params.config.width != data.width) {
    throw UsageError("checkpoint/dataset disagreement: checkpoint expects " + std::to_string(params.config.height) +
                     "x" + std::to_string(params.config.width) + " tensors but the dataset holds " +
                     std::to_string(data.height) + "x" + std::to_string(data.width));
  }
  std::filesystem::create_directories(o.report_dir);
  const std::filesystem::path dir = o.report_dir;
  RunLog log(out);
  echo_config(log, sub);
  const auto ev = evaluate(params, data, *split_id);
  auto emit = [&](const ConfusionMatrix& m, const std::string& stem) {
    write_bytes(dir / ("confusion_" + stem + ".csv"), m.to_csv());
    if (m.total() > 0) render_heatmap(m, dir / ("heatmap_" + stem + ".pgm"));
  };
  for (const auto& m : ev.per_snr) emit(m, "snr_" + m.tag());
  emit(ev.pooled, "pooled");
  const auto table = ev.table();
  write_bytes(dir / "accuracy.csv", table.to_csv());
  const auto comparison = compare_to_literature(table);
  write_bytes(dir / "comparison.txt", comparison);
  for (const auto& r : table.rows) {
    log.line("snr " + fmt("%g", r.snr_db) + " dB: accuracy " + fmt("%.4f", r.accuracy) + " over " +
             std::to_string(r.count));
  }
  log.line("pooled accuracy " + fmt("%.4f", ev.accuracy) + " over " + std::to_string(ev.pooled.total()));
  log.save(dir / "eval.log");
  return kExitOk;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Parses a config file of `key = value` lines; `#` starts a comment.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(no) + ": expected 'key = value'");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw UsageError(path + ":" + std::to_string(no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// Command line with the config file entries of the selected subcommand
/// spliced in ahead of the explicit flags, so the flags win.
std::vector<std::string> with_config_file(const std::vector<std::string>& args,
                                          const std::vector<CLI::App*>& subs) {
  std::vector<std::string> argv{"eyemod"};
  CLI::App* sub = nullptr;
  for (auto* s : subs) {
    if (!args.empty() && args[0] == s->get_name()) sub = s;
  }
  std::string path;
  if (sub) {
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      if (args[i].starts_with("--config=")) path = args[i].substr(9);
    }
  }
  if (path.empty()) {
    argv.insert(argv.end(), args.begin(), args.end());
    return argv;
  }
  argv.push_back(args[0]);
  for (const auto& [key, value] : read_config_file(path)) {
    const auto* opt = sub->get_option_no_throw("--" + key);
    if (key == "config" || opt == nullptr) {
      throw UsageError("unknown key '" + key + "' in " + path + " for '" + sub->get_name() + "'");
    }
    argv.push_back("--" + key + "=" + value);
  }
  argv.insert(argv.end(), args.begin() + 1, args.end());
  return argv;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Eye-diagram modulation classification toolkit", "eyemod"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  auto config = [](CLI::App* sub) {
    sub->add_option("--config", "key = value configuration file; flags override it");
  };

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Synthesize one impaired frame");
  config(synth);
  synth->add_option("--scheme", so.scheme, "Modulation scheme: " + scheme_name_list())->required();
  synth->add_option("--snr", so.snr, "SNR in dB (inf = no noise)");
  synth->add_option("--seed", so.seed, "Frame seed");
  synth->add_option("--out", so.out, "Frame file");
  synth->add_flag("--render", so.render, "Also write P5 eye graymaps of both channels");
  synth->add_option("--height", so.height, "Eye image height");
  synth->add_option("--width", so.width, "Eye image width");
  synth->add_option("--n-s", so.n_s, "Samples per eye trace");
  synth->add_option("--sps", so.sps, "Samples per symbol");
  synth->add_option("--frame-len", so.frame_len, "Samples per frame");
  synth->add_option("--k-factor", so.k_factor, "Rician K-factor of the first path");

  DatasetOptions d;
  auto* dataset = app.add_subcommand("dataset", "Build a labeled eye-diagram dataset");
  config(dataset);
  dataset->add_option("--classes", d.classes, "Comma-separated schemes or 'all'");
  dataset->add_option("--snrs", d.snrs, "Comma-separated SNR grid in dB");
  dataset->add_option("--frames", d.frames, "Frames per (class, SNR) cell");
  dataset->add_option("--seed", d.seed, "Global frame seed");
  dataset->add_option("--split-seed", d.split_seed, "Split shuffle seed");
  dataset->add_option("--train", d.train, "Train fraction");
  dataset->add_option("--val", d.val, "Validation fraction");
  dataset->add_option("--test", d.test, "Test fraction");
  dataset->add_option("--height", d.height, "Tensor height");
  dataset->add_option("--width", d.width, "Tensor width");
  dataset->add_option("--render-height", d.render_height, "Raster height before crop (0 = height)");
  dataset->add_option("--render-width", d.render_width, "Raster width before crop (0 = width)");
  dataset->add_option("--n-s", d.n_s, "Samples per eye trace");
  dataset->add_option("--sps", d.sps, "Samples per symbol");
  dataset->add_option("--frame-len", d.frame_len, "Samples per frame");
  dataset->add_option("--k-factor", d.k_factor, "Rician K-factor of the first path");
  dataset->add_option("--threads", d.threads, "Worker threads (0 = EYEMOD_THREADS or all cores)");
  dataset->add_option("--out", d.out, "Dataset file");
  dataset->add_flag("--dry-run", d.dry_run, "Echo the plan without building");

  TrainOptions t;
  auto* trainer = app.add_subcommand("train", "Train the classifier on a dataset");
  config(trainer);
  trainer->add_option("--data", t.data, "Dataset file")->required();
  trainer->add_option("--out", t.out, "Checkpoint file");
  trainer->add_option("--metrics", t.metrics, "Metrics CSV (default <out>.metrics.csv)");
  trainer->add_option("--lr", t.lr, "Learning rate");
  trainer->add_option("--momentum", t.momentum, "SGD momentum");
  trainer->add_option("--epochs", t.epochs, "Epochs");
  trainer->add_option("--batch", t.batch, "Mini-batch size");
  trainer->add_option("--shuffle-seed", t.shuffle_seed, "Epoch shuffle seed");
  trainer->add_option("--init-seed", t.init_seed, "Weight initialization seed");
  trainer->add_option("--init-gain", t.init_gain, "Convolution init scale relative to He");
  trainer->add_option("--stem", t.stem, "Stem channels");
  trainer->add_option("--blocks", t.blocks, "Comma-separated block channels");
  trainer->add_option("--residual", t.residual, "Residual second convolution per block");

  EvalOptions e;
  auto* evaluator = app.add_subcommand("eval", "Evaluate a checkpoint and write reports");
  config(evaluator);
  evaluator->add_option("--data", e.data, "Dataset file")->required();
  evaluator->add_option("--checkpoint", e.checkpoint, "Checkpoint file")->required();
  evaluator->add_option("--report-dir", e.report_dir, "Output directory");
  evaluator->add_option("--split", e.split, "Split to evaluate (train, val, test)");

  std::vector<std::string> argv_store{"eyemod"};
  try {
    argv_store = with_config_file(args, {synth, dataset, trainer, evaluator});
  } catch (const UsageError& ue) {
    err << "error: " << ue.what() << '\n';
    return kExitUsage;
  } catch (const Error& ee) {
    err << "error: " << ee.what() << '\n';
    return exit_code_for(ee.code());
  }
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(*synth, so, out);
    if (dataset->parsed()) return cmd_dataset(*dataset, d, out);
    if (trainer->parsed()) return cmd_train(*trainer, t, out, err);
    return cmd_eval(*evaluator, e, out);
  } catch (const UsageError& ue) {
    err << "error: " << ue.what() << '\n';
    return kExitUsage;
  } catch (const Error& ee) {
    err << "error: " << ee.what() << '\n';
    return exit_code_for(ee.code());
  } catch (const std::filesystem::filesystem_error& fe) {
    err << "error: " << fe.what() << '\n';
    return kExitIo;
  } catch (const std::bad_alloc&) {
    err << "error: not enough memory for this plan\n";
    return kExitIo;
  }
}

}  // namespace cli
}  // namespace eyemod

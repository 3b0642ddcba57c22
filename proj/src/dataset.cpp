#include "eyemod/dataset.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "eyemod/error.hpp"

namespace eyemod {

namespace {

constexpr char kMagic[8] = {'E', 'Y', 'E', 'A', 'M', 'C', '1', '\n'};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Error(ErrorCode::Corrupt, "dataset file is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void bytes(std::uint8_t* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string join_indices(const std::vector<std::uint32_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void SplitFractions::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "split fractions must be positive");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "split fractions must sum to 1");
  }
}

void DatasetPlan::validate() const {
  if (schemes.empty()) throw Error(ErrorCode::InvalidArgument, "plan has no schemes");
  for (std::size_t i = 0; i < schemes.size(); ++i) {
    for (std::size_t j = i + 1; j < schemes.size(); ++j) {
      if (schemes[i] == schemes[j]) throw Error(ErrorCode::InvalidArgument, "duplicate scheme in plan");
    }
  }
  if (snr_grid_db.empty() || snr_grid_db.size() > 255) {
    throw Error(ErrorCode::InvalidArgument, "SNR grid must hold 1..255 levels");
  }
  if (frames_per_class_per_snr == 0) throw Error(ErrorCode::InvalidArgument, "frames per cell must be > 0");
  split.validate();
  frame.validate();
  channel.validate();
  if (pipeline.out_height == 0 || pipeline.out_width == 0) {
    throw Error(ErrorCode::InvalidArgument, "tensor dims must be positive");
  }
}

std::uint64_t DatasetPlan::payload_bytes() const noexcept {
  return static_cast<std::uint64_t>(total_records()) * pipeline.out_height * pipeline.out_width * 2;
}

const char* split_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

const std::vector<std::uint32_t>& SplitManifest::indices(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: break;
  }
  return test;
}

void DatasetContainer::check() const {
  if (channels != 2) throw Error(ErrorCode::Corrupt, "channel count must be 2");
  if (snr_indices.size() != class_ids.size()) throw Error(ErrorCode::Corrupt, "label arrays disagree");
  if (pixels.size() != count() * record_bytes()) throw Error(ErrorCode::Corrupt, "pixel payload size mismatch");
  for (std::size_t i = 0; i < count(); ++i) {
    if (class_ids[i] >= class_names.size()) throw Error(ErrorCode::Corrupt, "class id out of range");
    if (snr_indices[i] >= snr_table_db.size()) throw Error(ErrorCode::Corrupt, "snr index out of range");
  }
}

std::uint8_t quantize(float v) noexcept {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::size_t default_worker_count() {
  if (const char* env = std::getenv("EYEMOD_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EyeTensor synthesize_tensor(const DatasetPlan& plan, Scheme scheme, std::size_t snr_index,
                            std::size_t frame_index) {
  const std::uint64_t seed =
      frame_seed(plan.global_seed, static_cast<std::uint32_t>(scheme),
                 static_cast<std::uint32_t>(snr_index), frame_index);
  FrameSpec spec = plan.frame;
  spec.seed = derive_seed(seed, 0);
  const ComplexFrame clean = modulate(scheme, spec);
  ChannelConfig cfg = plan.channel;
  cfg.snr_db = plan.snr_grid_db[snr_index];
  cfg.fading_seed = derive_seed(seed, 1);
  return frame_to_tensor(impair(clean, cfg), plan.pipeline);
}

DatasetContainer build(const DatasetPlan& plan, std::size_t workers) {
  plan.validate();
  std::vector<Scheme> schemes = plan.schemes;
  std::sort(schemes.begin(), schemes.end());

  DatasetContainer out;
  out.height = static_cast<std::uint32_t>(plan.pipeline.out_height);
  out.width = static_cast<std::uint32_t>(plan.pipeline.out_width);
  for (Scheme s : schemes) out.class_names.emplace_back(scheme_name(s));
  out.snr_table_db = plan.snr_grid_db;

  const std::size_t per_cell = plan.frames_per_class_per_snr;
  const std::size_t n_snr = plan.snr_grid_db.size();
  const std::size_t total = plan.total_records();
  const std::size_t rec = out.record_bytes();
  out.class_ids.resize(total);
  out.snr_indices.resize(total);
  out.pixels.resize(total * rec);

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mutex;
  std::size_t err_index = total;
  std::exception_ptr err;

  auto work = [&] {
    for (std::size_t i = next++; i < total && !failed; i = next++) {
      const std::size_t c = i / (n_snr * per_cell);
      const std::size_t s = (i / per_cell) % n_snr;
      const std::size_t f = i % per_cell;
      try {
        const EyeTensor t = synthesize_tensor(plan, schemes[c], s, f);
        out.class_ids[i] = static_cast<std::uint8_t>(c);
        out.snr_indices[i] = static_cast<std::uint8_t>(s);
        std::uint8_t* dst = out.pixels.data() + i * rec;
        for (std::size_t k = 0; k < rec; ++k) dst[k] = quantize(t.data[k]);
      } catch (const std::exception& e) {
        std::lock_guard lock(err_mutex);
        if (i < err_index) {
          err_index = i;
          err = std::make_exception_ptr(Error(
              ErrorCode::InvalidArgument,
              std::string("frame (") + std::string(scheme_name(schemes[c])) + ", snr " +
                  std::to_string(plan.snr_grid_db[s]) + " dB, index " + std::to_string(f) +
                  "): " + e.what()));
        }
        failed = true;
      }
    }
  };

  const std::size_t n_workers = std::clamp<std::size_t>(workers ? workers : default_worker_count(), 1, total);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);

  out.manifest = split(out, plan.split, plan.split_seed);
  return out;
}

std::array<std::size_t, 3> cell_split_sizes(std::size_t n, const SplitFractions& fractions) noexcept {
  const auto cut1 = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
  const auto cut2 = std::max(cut1, static_cast<std::size_t>(std::llround(
                                       (fractions.train + fractions.val) * static_cast<double>(n))));
  const auto end = std::max(cut2, n);
  return {cut1, cut2 - cut1, end - cut2};
}

SplitManifest split(const DatasetContainer& container, const SplitFractions& fractions,
                    std::uint64_t seed) {
  fractions.validate();
  std::map<std::pair<std::uint8_t, std::uint8_t>, std::vector<std::uint32_t>> cells;
  for (std::size_t i = 0; i < container.count(); ++i) {
    cells[{container.class_ids[i], container.snr_indices[i]}].push_back(static_cast<std::uint32_t>(i));
  }
  SplitManifest m;
  m.seed = seed;
  m.fractions = fractions;
  for (auto& [key, members] : cells) {
    const std::size_t n = members.size();
    const auto sizes = cell_split_sizes(n, fractions);
    const std::size_t cut1 = sizes[0];
    const std::size_t cut2 = sizes[0] + sizes[1];
    if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) {
      throw Error(ErrorCode::CellTooSmall,
                  "cell (class " + std::to_string(key.first) + ", snr " +
                      std::to_string(key.second) + ") has " + std::to_string(n) +
                      " records, too few for three nonempty splits");
    }
    Rng rng(frame_seed(seed, key.first, key.second, 0));
    std::shuffle(members.begin(), members.end(), rng);
    m.train.insert(m.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(cut1));
    m.val.insert(m.val.end(), members.begin() + static_cast<std::ptrdiff_t>(cut1),
                 members.begin() + static_cast<std::ptrdiff_t>(cut2));
    m.test.insert(m.test.end(), members.begin() + static_cast<std::ptrdiff_t>(cut2), members.end());
  }
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.val.begin(), m.val.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p += ".manifest";
  return p;
}

std::string format_manifest(const SplitManifest& m, std::size_t count) {
  std::ostringstream os;
  os.precision(17);
  os << "# eyemod split manifest\n"
     << "version = 1\n"
     << "count = " << count << "\n"
     << "seed = " << m.seed << "\n"
     << "fractions = " << m.fractions.train << " " << m.fractions.val << " " << m.fractions.test << "\n"
     << "train_count = " << m.train.size() << "\n"
     << "val_count = " << m.val.size() << "\n"
     << "test_count = " << m.test.size() << "\n"
     << "train = " << join_indices(m.train) << "\n"
     << "val = " << join_indices(m.val) << "\n"
     << "test = " << join_indices(m.test) << "\n";
  return os.str();
}

SplitManifest parse_manifest(const std::string& text, std::size_t count) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Corrupt, "manifest line without '='");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw Error(ErrorCode::Corrupt, "manifest missing key '" + k + "'");
    return it->second;
  };
  if (get("version") != "1") throw Error(ErrorCode::UnsupportedVersion, "manifest version");
  if (std::stoull(get("count")) != count) {
    throw Error(ErrorCode::Corrupt, "manifest count disagrees with dataset");
  }
  SplitManifest m;
  m.seed = std::stoull(get("seed"));
  {
    std::istringstream fs(get("fractions"));
    fs >> m.fractions.train >> m.fractions.val >> m.fractions.test;
    if (!fs) throw Error(ErrorCode::Corrupt, "bad manifest fractions");
  }
  auto parse_list = [&](const std::string& key, std::vector<std::uint32_t>& dst) {
    std::istringstream ls(get(key));
    std::uint64_t v;
    while (ls >> v) dst.push_back(static_cast<std::uint32_t>(v));
    if (dst.size() != std::stoull(get(key + "_count"))) {
      throw Error(ErrorCode::Corrupt, "manifest " + key + " count mismatch");
    }
  };
  parse_list("train", m.train);
  parse_list("val", m.val);
  parse_list("test", m.test);
  std::vector<int> seen(count, 0);
  for (const auto* v : {&m.train, &m.val, &m.test}) {
    for (std::uint32_t i : *v) {
      if (i >= count || seen[i]++) throw Error(ErrorCode::Corrupt, "manifest is not a partition");
    }
  }
  if (m.train.size() + m.val.size() + m.test.size() != count) {
    throw Error(ErrorCode::Corrupt, "manifest does not cover every record");
  }
  return m;
}

void write(const DatasetContainer& c, const std::filesystem::path& path) {
  c.check();
  ByteWriter w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(c.version);
  w.u32(static_cast<std::uint32_t>(c.count()));
  w.u32(c.height);
  w.u32(c.width);
  w.u32(c.channels);
  w.u32(c.pixel_encoding);
  w.u32(static_cast<std::uint32_t>(c.class_names.size()));
  for (const auto& name : c.class_names) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
  }
  w.u32(static_cast<std::uint32_t>(c.snr_table_db.size()));
  for (double s : c.snr_table_db) w.f64(s);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  const std::size_t rec = c.record_bytes();
  for (std::size_t i = 0; i < c.count(); ++i) {
    const char ids[2] = {static_cast<char>(c.class_ids[i]), static_cast<char>(c.snr_indices[i])};
    out.write(ids, 2);
    out.write(reinterpret_cast<const char*>(c.record_pixels(i)), static_cast<std::streamsize>(rec));
  }
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());

  const auto mpath = manifest_path(path);
  if (c.manifest) {
    std::ofstream mo(mpath, std::ios::trunc);
    mo << format_manifest(*c.manifest, c.count());
    if (!mo) throw Error(ErrorCode::Io, "write failed for " + mpath.string());
  } else {
    std::error_code ec;
    std::filesystem::remove(mpath, ec);
  }
}

DatasetContainer read(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  if (buf.size() < sizeof kMagic || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::NotADataset, path.string() + " does not start with the dataset magic");
  }
  ByteReader r(buf);
  std::uint8_t skip[sizeof kMagic];
  r.bytes(skip, sizeof kMagic);

  DatasetContainer c;
  c.version = r.u32();
  if (c.version != kDatasetVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "dataset version " + std::to_string(c.version));
  }
  const std::uint32_t count = r.u32();
  c.height = r.u32();
  c.width = r.u32();
  c.channels = r.u32();
  c.pixel_encoding = r.u32();
  if (c.channels != 2) throw Error(ErrorCode::Corrupt, "channel count must be 2");
  if (c.pixel_encoding != kPixelEncodingU8) throw Error(ErrorCode::Corrupt, "unknown pixel encoding");
  const std::uint32_t n_classes = r.u32();
  if (n_classes == 0 || n_classes > 256) throw Error(ErrorCode::Corrupt, "bad class table size");
  for (std::uint32_t k = 0; k < n_classes; ++k) {
    const std::uint32_t len = r.u32();
    r.need(len);
    std::string name(len, '\0');
    r.bytes(reinterpret_cast<std::uint8_t*>(name.data()), len);
    c.class_names.push_back(std::move(name));
  }
  const std::uint32_t n_snr = r.u32();
  if (n_snr == 0 || n_snr > 256) throw Error(ErrorCode::Corrupt, "bad snr table size");
  for (std::uint32_t k = 0; k < n_snr; ++k) c.snr_table_db.push_back(r.f64());

  const std::size_t rec = c.record_bytes();
  if (r.remaining() != static_cast<std::size_t>(count) * (rec + 2)) {
    throw Error(ErrorCode::Corrupt, "record payload does not match the declared count " + std::to_string(count));
  }
  c.class_ids.resize(count);
  c.snr_indices.resize(count);
  c.pixels.resize(static_cast<std::size_t>(count) * rec);
  for (std::size_t i = 0; i < count; ++i) {
    c.class_ids[i] = r.u8();
    c.snr_indices[i] = r.u8();
    r.bytes(c.pixels.data() + i * rec, rec);
  }
  c.check();

  const auto mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    std::ifstream mi(mpath);
    std::stringstream ss;
    ss << mi.rdbuf();
    c.manifest = parse_manifest(ss.str(), c.count());
  }
  return c;
}

Batch gather(const DatasetContainer& c, std::span<const std::uint32_t> records) {
  Batch b;
  b.size = records.size();
  b.height = c.height;
  b.width = c.width;
  const std::size_t plane = static_cast<std::size_t>(c.height) * c.width;
  b.pixels.resize(b.size * 2 * plane);
  for (std::size_t n = 0; n < b.size; ++n) {
    const std::uint32_t idx = records[n];
    if (idx >= c.count()) throw Error(ErrorCode::InvalidArgument, "record index out of range");
    const std::uint8_t* src = c.record_pixels(idx);
    float* dst = b.pixels.data() + n * 2 * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      dst[p] = dequantize(src[2 * p]);
      dst[plane + p] = dequantize(src[2 * p + 1]);
    }
    b.labels.push_back(c.class_ids[idx]);
    b.snr_indices.push_back(c.snr_indices[idx]);
    b.records.push_back(idx);
  }
  return b;
}

BatchStream::BatchStream(const DatasetContainer& container, Split split, std::size_t batch_size,
                         std::uint64_t shuffle_seed)
    : container_(&container), batch_size_(batch_size) {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
  if (!container.manifest) throw Error(ErrorCode::InvalidArgument, "container has no split manifest");
  order_ = container.manifest->indices(split);
  if (order_.empty()) throw Error(ErrorCode::EmptySplit, std::string(split_name(split)) + " split is empty");
  if (split == Split::Train) {
    Rng rng(shuffle_seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  Batch b = gather(*container_, std::span(order_).subspan(cursor_, n));
  cursor_ += n;
  return b;
}

BatchStream iterate(const DatasetContainer& container, Split split, std::size_t batch_size,
                    std::uint64_t shuffle_seed) {
  return BatchStream(container, split, batch_size, shuffle_seed);
}

}  // namespace eyemod

#include "eyemod/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "eyemod/error.hpp"

namespace eyemod {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
  return buf;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names, std::string tag)
    : names_(std::move(class_names)), tag_(std::move(tag)), counts_(names_.size() * names_.size(), 0) {}

void ConfusionMatrix::accumulate(std::size_t true_label, std::size_t predicted_label) {
  if (true_label >= size() || predicted_label >= size()) {
    throw Error(ErrorCode::BadLabel, "label outside the " + std::to_string(size()) + "-class table");
  }
  ++counts_[true_label * size() + predicted_label];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.names_ != names_) throw Error(ErrorCode::InvalidArgument, "merging matrices with different classes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const noexcept {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < size(); ++i) t += counts_[i * size() + i];
  return t;
}

std::uint64_t ConfusionMatrix::row_total(std::size_t t) const {
  std::uint64_t r = 0;
  for (std::size_t p = 0; p < size(); ++p) r += at(t, p);
  return r;
}

double ConfusionMatrix::accuracy() const noexcept {
  const auto n = total();
  return n ? static_cast<double>(trace()) / static_cast<double>(n) : 0.0;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "true\\pred";
  for (const auto& n : names_) os << ',' << n;
  os << '\n';
  for (std::size_t t = 0; t < size(); ++t) {
    os << names_[t];
    for (std::size_t p = 0; p < size(); ++p) os << ',' << at(t, p);
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix ConfusionMatrix::from_csv(const std::string& text, std::string tag) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Corrupt, "empty confusion CSV");
  auto header = split_csv_line(line);
  if (header.size() < 2) throw Error(ErrorCode::Corrupt, "confusion CSV header too short");
  std::vector<std::string> names(header.begin() + 1, header.end());
  ConfusionMatrix m(names, std::move(tag));
  for (std::size_t t = 0; t < names.size(); ++t) {
    if (!std::getline(in, line)) throw Error(ErrorCode::Corrupt, "confusion CSV missing rows");
    const auto cells = split_csv_line(line);
    if (cells.size() != names.size() + 1 || cells[0] != names[t]) {
      throw Error(ErrorCode::Corrupt, "confusion CSV row " + std::to_string(t) + " malformed");
    }
    for (std::size_t p = 0; p < names.size(); ++p) {
      m.counts_[t * names.size() + p] = std::stoull(cells[p + 1]);
    }
  }
  return m;
}

GrayImage heatmap(const ConfusionMatrix& m) {
  if (m.total() == 0) throw Error(ErrorCode::EmptyMatrix, "cannot render an empty confusion matrix");
  const std::size_t n = m.size();
  GrayImage img{n * kHeatmapCell, n * kHeatmapCell, {}};
  img.pixels.assign(img.height * img.width, 0);
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = m.row_total(t);
    for (std::size_t p = 0; p < n; ++p) {
      const double rate = row ? static_cast<double>(m.at(t, p)) / static_cast<double>(row) : 0.0;
      const auto v = static_cast<std::uint8_t>(std::lround(255.0 * rate));
      for (std::size_t y = 0; y < kHeatmapCell; ++y) {
        auto* dst = img.pixels.data() + (t * kHeatmapCell + y) * img.width + p * kHeatmapCell;
        std::fill(dst, dst + kHeatmapCell, v);
      }
    }
  }
  return img;
}

void render_heatmap(const ConfusionMatrix& m, const std::filesystem::path& path) {
  write_pgm(path, heatmap(m));
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string magic;
  GrayImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw Error(ErrorCode::Corrupt, path.string() + " is not an 8-bit P5 graymap");
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw Error(ErrorCode::Corrupt, path.string() + " is truncated");
  }
  return img;
}

void AccuracyTable::validate() const {
  for (const auto& r : rows) {
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw Error(ErrorCode::InvalidArgument, "accuracy outside [0, 1]");
    if (r.count == 0) throw Error(ErrorCode::InvalidArgument, "accuracy row with zero samples");
  }
}

std::string AccuracyTable::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "snr_db,accuracy,count\n";
  for (const auto& r : rows) os << r.snr_db << ',' << r.accuracy << ',' << r.count << '\n';
  return os.str();
}

double AccuracyTable::pooled_accuracy() const {
  double hits = 0.0;
  double n = 0.0;
  for (const auto& r : rows) {
    hits += r.accuracy * static_cast<double>(r.count);
    n += static_cast<double>(r.count);
  }
  return n > 0.0 ? hits / n : 0.0;
}

std::string compare_to_literature(const AccuracyTable& table) {
  table.validate();
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%8s  %9s  %8s  %s\n", "snr_db", "measured", "samples", "reference");
  os << line;
  for (const auto& r : table.rows) {
    std::string ref;
    if (table.include_literature && std::abs(r.snr_db - kReferenceSnrDb) < 1e-9) {
      ref = std::string(kEyeDiagramReference.model) + " " + percent(kEyeDiagramReference.accuracy) +
            " (paper-reported, not reproduced)";
    }
    std::snprintf(line, sizeof line, "%8.1f  %9s  %8llu  %s\n", r.snr_db, percent(r.accuracy).c_str(),
                  static_cast<unsigned long long>(r.count), ref.c_str());
    os << line;
  }
  if (table.include_literature) {
    os << "\nLiterature baselines at their lowest reported SNR (quoted, not measured here):\n";
    for (const auto& b : kLiteratureBaselines) {
      std::snprintf(line, sizeof line, "  %-6s [%s]  %s (paper-reported, not reproduced)\n", b.model,
                    b.citation, percent(b.accuracy).c_str());
      os << line;
    }
    std::snprintf(line, sizeof line, "  %s [%s] at %.0f dB  %s (paper-reported, not reproduced)\n",
                  kEyeDiagramReference.model, kEyeDiagramReference.citation, kReferenceSnrDb,
                  percent(kEyeDiagramReference.accuracy).c_str());
    os << line;
  }
  return os.str();
}

}  // namespace eyemod

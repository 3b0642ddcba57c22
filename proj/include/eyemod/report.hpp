#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace eyemod {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  /// tag is the SNR label ("-20" etc.) or "pooled".
  ConfusionMatrix(std::vector<std::string> class_names, std::string tag);

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& class_names() const noexcept { return names_; }
  const std::string& tag() const noexcept { return tag_; }
  void set_tag(std::string tag) { tag_ = std::move(tag); }

  /// Throws BadLabel if either label is >= size().
  void accumulate(std::size_t true_label, std::size_t predicted_label);
  /// Cell-wise sum; class tables must agree.
  void merge(const ConfusionMatrix& other);

  std::uint64_t at(std::size_t t, std::size_t p) const { return counts_[t * size() + p]; }
  std::uint64_t total() const noexcept;
  std::uint64_t trace() const noexcept;
  std::uint64_t row_total(std::size_t t) const;
  /// trace / total; 0 for an empty matrix.
  double accuracy() const noexcept;

  /// Header row of class names, then one row of counts per true class.
  std::string to_csv() const;
  static ConfusionMatrix from_csv(const std::string& text, std::string tag = {});

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<std::string> names_;
  std::string tag_;
  std::vector<std::uint64_t> counts_;
};

inline constexpr std::size_t kHeatmapCell = 16;

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// 16x16-pixel cells; each cell is its row-normalized rate scaled to
/// [0, 255]. Throws EmptyMatrix if the matrix has no counts.
GrayImage heatmap(const ConfusionMatrix& m);
void render_heatmap(const ConfusionMatrix& m, const std::filesystem::path& path);

/// Binary portable graymap (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

struct LiteratureBaseline {
  const char* model;
  const char* citation;
  double accuracy;  // fraction, at the lowest SNR each work reports
};

/// Published low-SNR accuracies, quoted for side-by-side display. They are
/// reference constants, never local measurements.
inline constexpr LiteratureBaseline kLiteratureBaselines[] = {
    {"DBN", "li2019signal", 0.10},
    {"RNN", "hu2018robust", 0.48},
    {"LSTM", "zhang2018automatic", 0.12},
    {"CLDNN", "west2017deep", 0.12},
};
inline constexpr LiteratureBaseline kEyeDiagramReference{"ResNet-50", "eye-diagram reference",
                                                         0.936};
inline constexpr double kReferenceSnrDb = -20.0;

struct AccuracyRow {
  double snr_db = 0.0;
  double accuracy = 0.0;
  std::uint64_t count = 0;
};

struct AccuracyTable {
  std::vector<AccuracyRow> rows;
  bool include_literature = true;

  void validate() const;
  std::string to_csv() const;
  /// Count-weighted mean over rows.
  double pooled_accuracy() const;
};

/// Side-by-side text of this run's accuracies against the stored
/// literature numbers. Percentages to one decimal, counts exact.
std::string compare_to_literature(const AccuracyTable& table);

}  // namespace eyemod

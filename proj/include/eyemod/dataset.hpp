#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eyemod/channel.hpp"
#include "eyemod/eyepipe.hpp"
#include "eyemod/synth.hpp"

namespace eyemod {

struct SplitFractions {
  double train = 0.70;
  double val = 0.20;
  double test = 0.10;

  void validate() const;
  bool operator==(const SplitFractions&) const = default;
};

struct DatasetPlan {
  std::vector<Scheme> schemes{all_schemes().begin(), all_schemes().end()};
  std::vector<double> snr_grid_db{-20.0, -10.0, 0.0, 10.0, 20.0, 30.0};
  std::size_t frames_per_class_per_snr = 5000;
  SplitFractions split;
  std::uint64_t global_seed = 1;
  std::uint64_t split_seed = 2;
  FrameSpec frame;
  ChannelConfig channel;  // snr_db and fading_seed are set per frame
  PipelineParams pipeline;

  void validate() const;
  std::size_t total_records() const noexcept {
    return schemes.size() * snr_grid_db.size() * frames_per_class_per_snr;
  }
  /// Bytes of pixel payload a built container would hold.
  std::uint64_t payload_bytes() const noexcept;
};

enum class Split : std::uint8_t { Train, Val, Test };
const char* split_name(Split s) noexcept;
std::optional<Split> parse_split(std::string_view name);

struct SplitManifest {
  std::uint64_t seed = 0;
  SplitFractions fractions;
  std::vector<std::uint32_t> train, val, test;  // ascending record indices

  const std::vector<std::uint32_t>& indices(Split s) const;
  bool operator==(const SplitManifest&) const = default;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kPixelEncodingU8 = 1;  // value = byte / 255

/// Labeled, quantized EyeTensors. Pixels are stored per record as H*W*2
/// bytes in (row, column, channel) order.
struct DatasetContainer {
  std::uint32_t version = kDatasetVersion;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 2;
  std::uint32_t pixel_encoding = kPixelEncodingU8;
  std::vector<std::string> class_names;
  std::vector<double> snr_table_db;
  std::vector<std::uint8_t> class_ids;
  std::vector<std::uint8_t> snr_indices;
  std::vector<std::uint8_t> pixels;
  std::optional<SplitManifest> manifest;

  std::size_t count() const noexcept { return class_ids.size(); }
  std::size_t record_bytes() const noexcept {
    return static_cast<std::size_t>(height) * width * channels;
  }
  const std::uint8_t* record_pixels(std::size_t i) const { return pixels.data() + i * record_bytes(); }
  /// Throws Corrupt if any invariant is violated.
  void check() const;
  bool operator==(const DatasetContainer&) const = default;
};

std::uint8_t quantize(float v) noexcept;
inline float dequantize(std::uint8_t b) noexcept { return static_cast<float>(b) / 255.0f; }

/// Worker count: EYEMOD_THREADS if set and positive, otherwise the hardware
/// concurrency.
std::size_t default_worker_count();

/// The tensor of one (class, snr, index) triple, before quantization.
EyeTensor synthesize_tensor(const DatasetPlan& plan, Scheme scheme, std::size_t snr_index,
                            std::size_t frame_index);

/// Builds every record of the plan in lexicographic (class, snr, index)
/// order, classes sorted canonically, and attaches a split manifest.
DatasetContainer build(const DatasetPlan& plan, std::size_t workers = 0);

/// Train/val/test sizes of one n-record cell: cuts at round(train*n) and
/// round((train+val)*n).
std::array<std::size_t, 3> cell_split_sizes(std::size_t n, const SplitFractions& fractions) noexcept;

/// Stratified split: per (class, snr) cell, seeded shuffle then contiguous
/// cuts at round(train*n) and round((train+val)*n). Throws CellTooSmall if a
/// cell cannot fill all three splits.
SplitManifest split(const DatasetContainer& container, const SplitFractions& fractions,
                    std::uint64_t seed);

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);

/// Writes the container and, if present, its manifest sidecar.
void write(const DatasetContainer& container, const std::filesystem::path& path);
/// Reads a container plus its sidecar manifest when one exists.
DatasetContainer read(const std::filesystem::path& path);

std::string format_manifest(const SplitManifest& manifest, std::size_t count);
SplitManifest parse_manifest(const std::string& text, std::size_t count);

/// One mini-batch. Pixels are dequantized and laid out as
/// (sample, channel, row, column).
struct Batch {
  std::size_t size = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  std::vector<int> labels;
  std::vector<std::uint8_t> snr_indices;
  std::vector<std::uint32_t> records;
};

/// Fills a batch from explicit record indices.
Batch gather(const DatasetContainer& container, std::span<const std::uint32_t> records);

class BatchStream {
 public:
  /// Train-split order is shuffled with shuffle_seed; val and test keep
  /// ascending record order. Throws EmptySplit if the split has no records.
  BatchStream(const DatasetContainer& container, Split split, std::size_t batch_size,
              std::uint64_t shuffle_seed);

  std::optional<Batch> next();
  std::size_t batch_count() const noexcept {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }
  std::size_t sample_count() const noexcept { return order_.size(); }

 private:
  const DatasetContainer* container_;
  std::vector<std::uint32_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

BatchStream iterate(const DatasetContainer& container, Split split, std::size_t batch_size,
                    std::uint64_t shuffle_seed);

}  // namespace eyemod

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "eyemod/synth.hpp"

namespace eyemod {

enum class IqChannel : std::uint8_t { I = 0, Q = 1 };

/// One channel of a frame folded into consecutive rows of n_s samples.
struct EyeTraces {
  std::vector<double> samples;  // n_traces * trace_len, row-major
  std::size_t trace_len = 0;
  IqChannel channel = IqChannel::I;

  std::size_t n_traces() const noexcept { return trace_len ? samples.size() / trace_len : 0; }
  std::span<const double> trace(std::size_t t) const {
    return {samples.data() + t * trace_len, trace_len};
  }
};

/// Grayscale raster, intensities in [0, 1], row 0 at the top.
struct EyeImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // row-major
  IqChannel channel = IqChannel::I;

  EyeImage() = default;
  EyeImage(std::size_t h, std::size_t w, IqChannel ch = IqChannel::I, float fill = 0.0f)
      : height(h), width(w), pixels(h * w, fill), channel(ch) {}

  float& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  bool operator==(const EyeImage&) const = default;
};

/// (H, W, 2) tensor; channel 0 = I, channel 1 = Q, interleaved per pixel.
struct EyeTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;  // H * W * 2
  Scheme label = Scheme::BPSK;
  std::optional<double> snr_db;

  static constexpr std::size_t kChannels = 2;

  float at(std::size_t h, std::size_t w, std::size_t c) const {
    return data[(h * width + w) * kChannels + c];
  }
  EyeImage channel_image(IqChannel ch) const;
  bool operator==(const EyeTensor&) const = default;
};

struct PipelineParams {
  std::size_t n_s = 8;
  std::size_t render_height = 299;
  std::size_t render_width = 699;
  std::size_t out_height = 299;
  std::size_t out_width = 699;
};

/// Throws BadTraceLength unless n_s >= 2 divides the frame length.
std::pair<EyeTraces, EyeTraces> fold_traces(const ComplexFrame& frame, std::size_t n_s);

/// Axis-free density plot of the traces. Each trace is drawn as a polyline,
/// sample i at column round(i * (width-1) / (n_s-1)) and amplitude
/// [-amp_range, +amp_range] mapped onto rows [height-1, 0] (clamped). Every
/// pixel a trace passes through gains one hit; counts are divided by the
/// maximum count.
EyeImage rasterize(const EyeTraces& traces, std::size_t height, std::size_t width,
                   double amp_range);

/// Bounding box of nonzero pixels plus a 2-pixel margin, clamped to the
/// image. Throws EmptyImage on an all-zero image.
EyeImage crop(const EyeImage& image);

inline constexpr std::size_t kCropMargin = 2;

/// BT.601 luma of a [0, 1] RGB triple. Throws BadPixel outside [0, 1].
double rgb_to_gray(double r, double g, double b);
/// Byte mode: inputs in [0, 255], result rounded. Throws BadPixel otherwise.
int rgb_to_gray_u8(int r, int g, int b);
/// Converts an interleaved 8-bit RGB buffer to a [0, 1] grayscale image.
EyeImage ingest_rgb(std::span<const std::uint8_t> rgb, std::size_t height, std::size_t width,
                    IqChannel channel);

/// Bilinear resampling on a pixel-centre grid:
/// src = (dst + 0.5) * in / out - 0.5, clamped at the borders.
EyeImage resize(const EyeImage& image, std::size_t out_h, std::size_t out_w);

/// Fold, rasterize, crop, resize and stack a frame into an EyeTensor. The
/// vertical scale of each channel is that channel's peak absolute amplitude.
EyeTensor frame_to_tensor(const ComplexFrame& frame, const PipelineParams& params = {});

/// Shannon entropy (bits) of the 256-bin histogram of the image's 8-bit
/// gray levels, round(255 * v).
double pixel_entropy(const EyeImage& image);

}  // namespace eyemod

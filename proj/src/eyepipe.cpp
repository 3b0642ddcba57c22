#include "eyemod/eyepipe.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <cstdint>
#include <string>

#include "eyemod/error.hpp"

namespace eyemod {

EyeImage EyeTensor::channel_image(IqChannel ch) const {
  EyeImage img(height, width, ch);
  const auto c = static_cast<std::size_t>(ch);
  for (std::size_t i = 0; i < height * width; ++i) img.pixels[i] = data[i * kChannels + c];
  return img;
}

std::pair<EyeTraces, EyeTraces> fold_traces(const ComplexFrame& frame, std::size_t n_s) {
  const std::size_t n = frame.samples.size();
  if (n_s < 2 || n == 0 || n % n_s != 0) {
    throw Error(ErrorCode::BadTraceLength,
                "frame length " + std::to_string(n) + " is not a multiple of n_s=" +
                    std::to_string(n_s));
  }
  EyeTraces i_tr{std::vector<double>(n), n_s, IqChannel::I};
  EyeTraces q_tr{std::vector<double>(n), n_s, IqChannel::Q};
  for (std::size_t k = 0; k < n; ++k) {
    i_tr.samples[k] = frame.samples[k].real();
    q_tr.samples[k] = frame.samples[k].imag();
  }
  return {std::move(i_tr), std::move(q_tr)};
}

EyeImage rasterize(const EyeTraces& traces, std::size_t height, std::size_t width,
                   double amp_range) {
  if (height < 8 || width < 8) throw Error(ErrorCode::InvalidArgument, "raster must be >= 8x8");
  if (!(amp_range > 0.0)) throw Error(ErrorCode::InvalidArgument, "amp_range must be > 0");
  if (traces.trace_len < 2) throw Error(ErrorCode::BadTraceLength, "traces need >= 2 samples");

  std::vector<std::uint32_t> hits(height * width, 0);
  const double x_scale = static_cast<double>(width - 1) / static_cast<double>(traces.trace_len - 1);
  const double y_scale = static_cast<double>(height - 1) / (2.0 * amp_range);
  auto row_of = [&](double v) {
    v = std::clamp(v, -amp_range, amp_range);
    return (amp_range - v) * y_scale;
  };
  auto hit = [&](long r, long c) { ++hits[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)]; };

  for (std::size_t t = 0; t < traces.n_traces(); ++t) {
    const auto tr = traces.trace(t);
    for (std::size_t i = 0; i + 1 < tr.size(); ++i) {
      const long c0 = std::lround(static_cast<double>(i) * x_scale);
      const long c1 = std::lround(static_cast<double>(i + 1) * x_scale);
      const double y0 = row_of(tr[i]);
      const double y1 = row_of(tr[i + 1]);
      const double span = static_cast<double>(c1 - c0);
      auto y_at = [&](long c) { return y0 + (y1 - y0) * static_cast<double>(c - c0) / span; };
      // Column c covers the rows from y(c) up to, but excluding, y(c+1);
      // the next column starts there, so each pixel gets one hit per trace.
      for (long c = c0; c < c1; ++c) {
        const long ra = std::lround(y_at(c));
        const long rb = std::lround(y_at(c + 1));
        if (ra == rb) {
          hit(ra, c);
          continue;
        }
        const long step = rb > ra ? 1 : -1;
        for (long r = ra; r != rb; r += step) hit(r, c);
      }
    }
    hit(std::lround(row_of(tr.back())), static_cast<long>(width - 1));
  }

  EyeImage img(height, width, traces.channel);
  const std::uint32_t peak = *std::max_element(hits.begin(), hits.end());
  if (peak == 0) return img;
  const float inv = 1.0f / static_cast<float>(peak);
  for (std::size_t k = 0; k < hits.size(); ++k) {
    img.pixels[k] = hits[k] == peak ? 1.0f : static_cast<float>(hits[k]) * inv;
  }
  return img;
}

EyeImage crop(const EyeImage& image) {
  std::size_t r0 = image.height, r1 = 0, c0 = image.width, c1 = 0;
  bool any = false;
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      if (image.at(r, c) > 0.0f) {
        any = true;
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
    }
  }
  if (!any) throw Error(ErrorCode::EmptyImage, "cannot crop an all-zero image");
  r0 = r0 >= kCropMargin ? r0 - kCropMargin : 0;
  c0 = c0 >= kCropMargin ? c0 - kCropMargin : 0;
  r1 = std::min(image.height - 1, r1 + kCropMargin);
  c1 = std::min(image.width - 1, c1 + kCropMargin);

  EyeImage out(r1 - r0 + 1, c1 - c0 + 1, image.channel);
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) out.at(r, c) = image.at(r0 + r, c0 + c);
  }
  return out;
}

double rgb_to_gray(double r, double g, double b) {
  for (double v : {r, g, b}) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::BadPixel, "RGB component outside [0, 1]");
  }
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

int rgb_to_gray_u8(int r, int g, int b) {
  for (int v : {r, g, b}) {
    if (v < 0 || v > 255) throw Error(ErrorCode::BadPixel, "RGB byte outside [0, 255]");
  }
  return static_cast<int>(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
}

EyeImage ingest_rgb(std::span<const std::uint8_t> rgb, std::size_t height, std::size_t width,
                    IqChannel channel) {
  if (rgb.size() != height * width * 3) {
    throw Error(ErrorCode::ShapeError, "RGB buffer size does not match dimensions");
  }
  EyeImage img(height, width, channel);
  for (std::size_t k = 0; k < height * width; ++k) {
    img.pixels[k] = static_cast<float>(
        rgb_to_gray(rgb[3 * k] / 255.0, rgb[3 * k + 1] / 255.0, rgb[3 * k + 2] / 255.0));
  }
  return img;
}

EyeImage resize(const EyeImage& image, std::size_t out_h, std::size_t out_w) {
  if (out_h < 1 || out_w < 1) throw Error(ErrorCode::InvalidArgument, "resize target must be >= 1");
  if (image.height == 0 || image.width == 0) throw Error(ErrorCode::EmptyImage, "empty image");
  if (out_h == image.height && out_w == image.width) return image;

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
      const double s = std::clamp((static_cast<double>(d) + 0.5) * scale - 0.5, 0.0,
                                  static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(s));
      t[d] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(image.height, out_h);
  const auto tx = taps(image.width, out_w);

  EyeImage out(out_h, out_w, image.channel);
  for (std::size_t r = 0; r < out_h; ++r) {
    const auto& y = ty[r];
    for (std::size_t c = 0; c < out_w; ++c) {
      const auto& x = tx[c];
      const double top = image.at(y.lo, x.lo) * (1.0 - x.frac) + image.at(y.lo, x.hi) * x.frac;
      const double bot = image.at(y.hi, x.lo) * (1.0 - x.frac) + image.at(y.hi, x.hi) * x.frac;
      const double v = top * (1.0 - y.frac) + bot * y.frac;
      out.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

EyeTensor frame_to_tensor(const ComplexFrame& frame, const PipelineParams& params) {
  auto [i_tr, q_tr] = fold_traces(frame, params.n_s);
  auto render = [&](const EyeTraces& tr) {
    double peak = 0.0;
    for (double v : tr.samples) peak = std::max(peak, std::abs(v));
    if (!(peak > 0.0) || !std::isfinite(peak)) peak = 1.0;
    const auto raw = rasterize(tr, params.render_height, params.render_width, peak);
    return resize(crop(raw), params.out_height, params.out_width);
  };
  const EyeImage img_i = render(i_tr);
  const EyeImage img_q = render(q_tr);

  EyeTensor t;
  t.height = params.out_height;
  t.width = params.out_width;
  t.label = frame.scheme;
  t.snr_db = frame.snr_db;
  t.data.resize(t.height * t.width * EyeTensor::kChannels);
  for (std::size_t k = 0; k < t.height * t.width; ++k) {
    t.data[k * 2] = img_i.pixels[k];
    t.data[k * 2 + 1] = img_q.pixels[k];
  }
  return t;
}

double pixel_entropy(const EyeImage& image) {
  if (image.pixels.empty()) return 0.0;
  std::array<std::size_t, 256> hist{};
  for (float v : image.pixels) ++hist[static_cast<std::size_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))];
  const double n = static_cast<double>(image.pixels.size());
  double h = 0.0;
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace eyemod

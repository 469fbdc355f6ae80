#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hazesfm {

// Planar floating-point image: `channels` planes of height x width samples,
// row-major within a plane. The shared pixel container for frames, depth
// maps, scattering fields, masks and score maps.
struct ImageF {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ImageF() = default;
  ImageF(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w) {
    if (c <= 0 || h <= 0 || w <= 0)
      throw std::invalid_argument("ImageF: non-positive shape");
    data.assign(static_cast<size_t>(c) * h * w, fill);
  }

  long plane_size() const { return static_cast<long>(height) * width; }
  long size() const { return static_cast<long>(channels) * plane_size(); }
  bool empty() const { return data.empty(); }

  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }

  bool same_shape(const ImageF& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  ImageF channel(int c) const {
    ImageF out(1, height, width);
    std::copy_n(data.begin() + static_cast<size_t>(c) * plane_size(),
                plane_size(), out.data.begin());
    return out;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double min_value() const { return *std::min_element(data.begin(), data.end()); }
  double max_value() const { return *std::max_element(data.begin(), data.end()); }

  double mean() const {
    double s = 0.0;
    for (double v : data) s += v;
    return s / static_cast<double>(size());
  }
};

inline void require_shape(const ImageF& a, const ImageF& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch");
}

inline ImageF constant_like(const ImageF& a, double v) {
  return ImageF(a.channels, a.height, a.width, v);
}

// 2x2 box-average downsampling. Odd trailing row/column is dropped so pyramid
// levels never depend on a padding policy.
inline ImageF downsample2(const ImageF& img) {
  if (img.height < 2 || img.width < 2)
    throw std::invalid_argument("downsample2: dims < 2");
  const int oh = img.height / 2, ow = img.width / 2;
  ImageF out(img.channels, oh, ow);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        out.at(c, y, x) = 0.25 * (img.at(c, 2 * y, 2 * x) + img.at(c, 2 * y, 2 * x + 1) +
                                  img.at(c, 2 * y + 1, 2 * x) + img.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

// Adjoint of downsample2 for a fine grid of the given shape: scatters each
// coarse gradient back to its 2x2 block with weight 1/4; dropped rows/columns
// receive zero.
inline ImageF downsample2_adjoint(const ImageF& coarse_grad, int fine_h, int fine_w) {
  ImageF out(coarse_grad.channels, fine_h, fine_w, 0.0);
  for (int c = 0; c < coarse_grad.channels; ++c)
    for (int y = 0; y < coarse_grad.height; ++y)
      for (int x = 0; x < coarse_grad.width; ++x) {
        const double g = 0.25 * coarse_grad.at(c, y, x);
        out.at(c, 2 * y, 2 * x) += g;
        out.at(c, 2 * y, 2 * x + 1) += g;
        out.at(c, 2 * y + 1, 2 * x) += g;
        out.at(c, 2 * y + 1, 2 * x + 1) += g;
      }
  return out;
}

namespace detail {
inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }
}

// 3x3 normalized Sobel gradients with replicate borders. A unit-slope ramp
// yields gradient 1 in the interior.
inline void sobel_gradients(const ImageF& img, ImageF& gx, ImageF& gy) {
  gx = constant_like(img, 0.0);
  gy = constant_like(img, 0.0);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        auto s = [&](int dy, int dx) {
          return img.at(c, detail::clampi(y + dy, 0, img.height - 1),
                        detail::clampi(x + dx, 0, img.width - 1));
        };
        gx.at(c, y, x) = (s(-1, 1) + 2.0 * s(0, 1) + s(1, 1) -
                          s(-1, -1) - 2.0 * s(0, -1) - s(1, -1)) / 8.0;
        gy.at(c, y, x) = (s(1, -1) + 2.0 * s(1, 0) + s(1, 1) -
                          s(-1, -1) - 2.0 * s(-1, 0) - s(-1, 1)) / 8.0;
      }
}

// Adjoint of sobel_gradients: accumulates upstream gradients through the same
// replicate-padded taps.
inline void sobel_adjoint(const ImageF& gx_up, const ImageF& gy_up, ImageF& out) {
  out = constant_like(gx_up, 0.0);
  const int h = gx_up.height, w = gx_up.width;
  for (int c = 0; c < gx_up.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        auto add = [&](int dy, int dx, double wgt, double v) {
          out.at(c, detail::clampi(y + dy, 0, h - 1), detail::clampi(x + dx, 0, w - 1)) +=
              wgt * v / 8.0;
        };
        const double ux = gx_up.at(c, y, x), uy = gy_up.at(c, y, x);
        add(-1, 1, 1.0, ux);  add(0, 1, 2.0, ux);  add(1, 1, 1.0, ux);
        add(-1, -1, -1.0, ux); add(0, -1, -2.0, ux); add(1, -1, -1.0, ux);
        add(1, -1, 1.0, uy);  add(1, 0, 2.0, uy);  add(1, 1, 1.0, uy);
        add(-1, -1, -1.0, uy); add(-1, 0, -2.0, uy); add(-1, 1, -1.0, uy);
      }
}

// 3x3 box mean with replicate borders (SSIM window statistics).
inline ImageF box3(const ImageF& img) {
  ImageF out = constant_like(img, 0.0);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += img.at(c, detail::clampi(y + dy, 0, img.height - 1),
                          detail::clampi(x + dx, 0, img.width - 1));
        out.at(c, y, x) = acc / 9.0;
      }
  return out;
}

// Adjoint of box3 (scatter with the same clamped taps).
inline ImageF box3_adjoint(const ImageF& up) {
  ImageF out = constant_like(up, 0.0);
  for (int c = 0; c < up.channels; ++c)
    for (int y = 0; y < up.height; ++y)
      for (int x = 0; x < up.width; ++x) {
        const double g = up.at(c, y, x) / 9.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            out.at(c, detail::clampi(y + dy, 0, up.height - 1),
                   detail::clampi(x + dx, 0, up.width - 1)) += g;
      }
  return out;
}

// Separable 3-tap blur with kernel [a, 1-2a, a] per axis, replicate borders.
// With a matched to the mean second moment of a supersampled bilinear warp it
// equalizes the blur of warped and unwarped frames in photometric terms.
inline ImageF triangle_blur3(const ImageF& img, double a) {
  ImageF out = constant_like(img, 0.0);
  const double k[3] = {a, 1.0 - 2.0 * a, a};
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += k[dy + 1] * k[dx + 1] *
                   img.at(c, detail::clampi(y + dy, 0, img.height - 1),
                          detail::clampi(x + dx, 0, img.width - 1));
        out.at(c, y, x) = acc;
      }
  return out;
}

// Adjoint of triangle_blur3 (scatter through the same clamped taps).
inline ImageF triangle_blur3_adjoint(const ImageF& up, double a) {
  ImageF out = constant_like(up, 0.0);
  const double k[3] = {a, 1.0 - 2.0 * a, a};
  for (int c = 0; c < up.channels; ++c)
    for (int y = 0; y < up.height; ++y)
      for (int x = 0; x < up.width; ++x) {
        const double g = up.at(c, y, x);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            out.at(c, detail::clampi(y + dy, 0, up.height - 1),
                   detail::clampi(x + dx, 0, up.width - 1)) +=
                k[dy + 1] * k[dx + 1] * g;
      }
  return out;
}

// Bilinear 2x upsampling used when promoting coarse fields between pyramid
// levels. Coordinates follow the pixel-center convention: fine pixel (x, y)
// samples the coarse image at ((x - 0.5) / 2, (y - 0.5) / 2), clamped.
inline ImageF upsample2_bilinear(const ImageF& img, int fine_h, int fine_w) {
  ImageF out(img.channels, fine_h, fine_w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < fine_h; ++y)
      for (int x = 0; x < fine_w; ++x) {
        const double sy = std::clamp((y - 0.5) / 2.0, 0.0, static_cast<double>(img.height - 1));
        const double sx = std::clamp((x - 0.5) / 2.0, 0.0, static_cast<double>(img.width - 1));
        const int y0 = static_cast<int>(std::floor(sy));
        const int x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, img.height - 1);
        const int x1 = std::min(x0 + 1, img.width - 1);
        const double fy = sy - y0, fx = sx - x0;
        out.at(c, y, x) = (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
                          fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
      }
  return out;
}

inline ImageF channel_mean(const ImageF& img) {
  ImageF out(1, img.height, img.width, 0.0);
  for (int c = 0; c < img.channels; ++c)
    for (long i = 0; i < img.plane_size(); ++i)
      out.data[i] += img.data[static_cast<size_t>(c) * img.plane_size() + i];
  for (auto& v : out.data) v /= img.channels;
  return out;
}

// Adjoint of channel_mean against a `channels`-plane input.
inline ImageF channel_mean_adjoint(const ImageF& up, int channels) {
  ImageF out(channels, up.height, up.width, 0.0);
  for (int c = 0; c < channels; ++c)
    for (long i = 0; i < up.plane_size(); ++i)
      out.data[static_cast<size_t>(c) * up.plane_size() + i] = up.data[i] / channels;
  return out;
}

}  // namespace hazesfm

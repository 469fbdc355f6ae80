#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "hazesfm/image.hpp"

namespace hazesfm {

// Deterministic multi-level feature producer for the perceptual and
// misaligned-reference losses. Level l output has spatial dims
// input / 2^(l-1); levels that cannot be downsampled further are dropped.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int levels() const = 0;
  // Feature stack per realized level.
  virtual std::vector<ImageF> features(const ImageF& image) const = 0;
  // Adjoint of the feature map: accumulates into g_image the pullback of the
  // per-level upstream gradients.
  virtual void backward(const ImageF& image,
                        const std::vector<ImageF>& upstream,
                        ImageF* g_image) const = 0;
};

// Built-in extractor: a box-downsampled pyramid of [luminance, sobel-gx,
// sobel-gy] channels. Linear in the input, so the backward pass is an exact
// adjoint independent of the operating point.
class PyramidFeatureExtractor final : public FeatureExtractor {
 public:
  explicit PyramidFeatureExtractor(int levels = 5) : levels_(levels) {
    if (levels < 1) throw std::invalid_argument("PyramidFeatureExtractor: levels >= 1");
  }

  int levels() const override { return levels_; }

  std::vector<ImageF> features(const ImageF& image) const override {
    std::vector<ImageF> out;
    ImageF cur = image;
    for (int l = 0; l < levels_; ++l) {
      const ImageF lum = channel_mean(cur);
      ImageF gx, gy;
      sobel_gradients(lum, gx, gy);
      ImageF f(3, lum.height, lum.width);
      std::copy(lum.data.begin(), lum.data.end(), f.data.begin());
      std::copy(gx.data.begin(), gx.data.end(), f.data.begin() + lum.plane_size());
      std::copy(gy.data.begin(), gy.data.end(), f.data.begin() + 2 * lum.plane_size());
      out.push_back(std::move(f));
      if (l + 1 < levels_) {
        if (cur.height < 2 || cur.width < 2) break;
        cur = downsample2(cur);
      }
    }
    return out;
  }

  void backward(const ImageF& image, const std::vector<ImageF>& upstream,
                ImageF* g_image) const override {
    // Pyramid shapes, finest first.
    std::vector<std::pair<int, int>> shapes;
    {
      int h = image.height, w = image.width;
      for (size_t l = 0; l < upstream.size(); ++l) {
        shapes.emplace_back(h, w);
        h /= 2;
        w /= 2;
      }
    }
    ImageF carry;  // accumulated gradient at the current level, image channels
    for (int l = static_cast<int>(upstream.size()) - 1; l >= 0; --l) {
      const ImageF& up = upstream[static_cast<size_t>(l)];
      ImageF u_lum(1, up.height, up.width);
      std::copy_n(up.data.begin(), up.plane_size(), u_lum.data.begin());
      ImageF gx_up(1, up.height, up.width), gy_up(1, up.height, up.width);
      std::copy_n(up.data.begin() + up.plane_size(), up.plane_size(), gx_up.data.begin());
      std::copy_n(up.data.begin() + 2 * up.plane_size(), up.plane_size(), gy_up.data.begin());
      ImageF sob;
      sobel_adjoint(gx_up, gy_up, sob);
      for (long i = 0; i < u_lum.size(); ++i) u_lum.data[i] += sob.data[i];
      ImageF g_level = channel_mean_adjoint(u_lum, image.channels);
      if (!carry.empty())
        for (long i = 0; i < g_level.size(); ++i) g_level.data[i] += carry.data[i];
      if (l > 0) {
        carry = downsample2_adjoint(g_level, shapes[static_cast<size_t>(l) - 1].first,
                                    shapes[static_cast<size_t>(l) - 1].second);
      } else {
        for (long i = 0; i < g_level.size(); ++i) g_image->data[i] += g_level.data[i];
      }
    }
  }

 private:
  int levels_;
};

}  // namespace hazesfm

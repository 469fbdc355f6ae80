#pragma once

#include <stdexcept>

#include "hazesfm/image.hpp"

namespace hazesfm {

// Orthonormal 2D Haar analysis over 2x2 blocks with stride 2. Each band
// coefficient is (+-a +-b +-c +-d) / 2, so the transform conserves energy and
// a constant c maps to ll == 2c.
//
// Band naming: hl carries the horizontal high-pass (responds to vertical
// edges), lh the vertical high-pass, hh the diagonal.
struct HaarBands {
  ImageF ll, lh, hl, hh;
  int source_height = 0;  // pre-padding dims, for exact unpooling
  int source_width = 0;
};

// Analysis. Odd inputs are replicate-padded by one row/column; the original
// shape is recorded so unpooling can crop back.
inline HaarBands haar_pool(const ImageF& image) {
  if (image.empty()) throw std::invalid_argument("haar_pool: empty image");
  HaarBands b;
  b.source_height = image.height;
  b.source_width = image.width;
  const int ph = image.height + (image.height % 2);
  const int pw = image.width + (image.width % 2);
  const int oh = ph / 2, ow = pw / 2;
  b.ll = ImageF(image.channels, oh, ow);
  b.lh = ImageF(image.channels, oh, ow);
  b.hl = ImageF(image.channels, oh, ow);
  b.hh = ImageF(image.channels, oh, ow);
  auto sample = [&](int c, int y, int x) {
    return image.at(c, std::min(y, image.height - 1), std::min(x, image.width - 1));
  };
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const double a = sample(c, 2 * y, 2 * x);
        const double bb = sample(c, 2 * y, 2 * x + 1);
        const double cc = sample(c, 2 * y + 1, 2 * x);
        const double d = sample(c, 2 * y + 1, 2 * x + 1);
        b.ll.at(c, y, x) = (a + bb + cc + d) / 2.0;
        b.hl.at(c, y, x) = (a - bb + cc - d) / 2.0;
        b.lh.at(c, y, x) = (a + bb - cc - d) / 2.0;
        b.hh.at(c, y, x) = (a - bb - cc + d) / 2.0;
      }
  return b;
}

// Synthesis; exact inverse of haar_pool (the 4x4 block transform is its own
// inverse).
inline ImageF haar_unpool(const HaarBands& b) {
  if (!b.ll.same_shape(b.lh) || !b.ll.same_shape(b.hl) || !b.ll.same_shape(b.hh))
    throw std::invalid_argument("haar_unpool: band shape mismatch");
  const int oh = b.source_height > 0 ? b.source_height : b.ll.height * 2;
  const int ow = b.source_width > 0 ? b.source_width : b.ll.width * 2;
  ImageF out(b.ll.channels, oh, ow);
  for (int c = 0; c < b.ll.channels; ++c)
    for (int y = 0; y < b.ll.height; ++y)
      for (int x = 0; x < b.ll.width; ++x) {
        const double ll = b.ll.at(c, y, x), hl = b.hl.at(c, y, x);
        const double lh = b.lh.at(c, y, x), hh = b.hh.at(c, y, x);
        const double a = (ll + hl + lh + hh) / 2.0;
        const double bb = (ll - hl + lh - hh) / 2.0;
        const double cc = (ll + hl - lh - hh) / 2.0;
        const double d = (ll - hl - lh + hh) / 2.0;
        const int y0 = 2 * y, x0 = 2 * x;
        if (y0 < oh && x0 < ow) out.at(c, y0, x0) = a;
        if (y0 < oh && x0 + 1 < ow) out.at(c, y0, x0 + 1) = bb;
        if (y0 + 1 < oh && x0 < ow) out.at(c, y0 + 1, x0) = cc;
        if (y0 + 1 < oh && x0 + 1 < ow) out.at(c, y0 + 1, x0 + 1) = d;
      }
  return out;
}

// High-frequency stack for the frequency/image discriminator input: the lh,
// hl and hh bands of each color channel, upsampled back to h x w by
// duplication, concatenated with the image itself. RGB in, 12 channels out
// (9 band channels + 3 image channels), ordered [lh, hl, hh, image].
inline ImageF mfir_input(const ImageF& image) {
  if (image.channels != 3)
    throw std::invalid_argument("mfir_input: needs an RGB image");
  const HaarBands b = haar_pool(image);
  ImageF out(12, image.height, image.width, 0.0);
  const ImageF* bands[3] = {&b.lh, &b.hl, &b.hh};
  for (int bi = 0; bi < 3; ++bi)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
          out.at(bi * 3 + c, y, x) =
              bands[bi]->at(c, std::min(y / 2, b.ll.height - 1),
                            std::min(x / 2, b.ll.width - 1));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        out.at(9 + c, y, x) = image.at(c, y, x);
  return out;
}

}  // namespace hazesfm

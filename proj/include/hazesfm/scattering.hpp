#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "hazesfm/image.hpp"

namespace hazesfm {

// Atmospheric scattering physics: I = J * t + A * (1 - t), t = exp(-beta * d).

// Scattering field and airlight. `beta` is a 1xhxw field or a 1x1x1 scalar
// (broadcast); airlight is per channel, with equal components for the scalar
// reading.
struct HazeParams {
  ImageF beta;
  std::array<double, 3> airlight{1.0, 1.0, 1.0};

  static HazeParams scalar_beta(double b, std::array<double, 3> a) {
    HazeParams p;
    p.beta = ImageF(1, 1, 1, b);
    p.airlight = a;
    return p;
  }

  bool beta_is_scalar() const { return beta.height == 1 && beta.width == 1; }
  double beta_at(int y, int x) const {
    return beta_is_scalar() ? beta.data[0] : beta.at(0, y, x);
  }

  void validate() const {
    if (beta.empty() || beta.channels != 1)
      throw std::invalid_argument("HazeParams: beta must be a 1-channel field");
    if (beta.min_value() < 0.0)
      throw std::invalid_argument("HazeParams: beta must be >= 0");
    for (double a : airlight)
      if (!(a >= 0.0 && a <= 1.0))
        throw std::invalid_argument("HazeParams: airlight outside [0,1]");
  }
};

struct DarkChannelConfig {
  int window = 15;           // odd min-filter patch size
  double top_fraction = 0.01;  // share of brightest dark-channel pixels

  void validate() const {
    if (window < 1 || window % 2 == 0)
      throw std::invalid_argument("DarkChannelConfig: window must be odd and >= 1");
    if (!(top_fraction > 0.0 && top_fraction <= 1.0))
      throw std::invalid_argument("DarkChannelConfig: top_fraction in (0,1]");
  }
};

namespace detail {
inline void check_depth_beta(const ImageF& depth, const HazeParams& p) {
  if (depth.channels != 1) throw std::invalid_argument("depth must be 1-channel");
  if (depth.min_value() <= 0.0) throw std::invalid_argument("depth must be > 0");
  p.validate();
  if (!p.beta_is_scalar() &&
      (p.beta.height != depth.height || p.beta.width != depth.width))
    throw std::invalid_argument("beta field shape does not match depth");
}
}  // namespace detail

// t(x) = exp(-beta(x) * d(x)), in (0, 1]; exactly 1 where beta == 0.
inline ImageF transmission(const ImageF& depth, const HazeParams& params) {
  detail::check_depth_beta(depth, params);
  ImageF t(1, depth.height, depth.width);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x)
      t.at(0, y, x) = std::exp(-params.beta_at(y, x) * depth.at(0, y, x));
  return t;
}

// Convex combination of the clear image and airlight, weighted by t.
inline ImageF synthesize_haze(const ImageF& clear, const ImageF& depth,
                              const HazeParams& params) {
  if (clear.height != depth.height || clear.width != depth.width)
    throw std::invalid_argument("synthesize_haze: shape mismatch");
  const ImageF t = transmission(depth, params);
  ImageF hazy = constant_like(clear, 0.0);
  for (int c = 0; c < clear.channels; ++c) {
    const double a = params.airlight[static_cast<size_t>(c) % 3];
    for (int y = 0; y < clear.height; ++y)
      for (int x = 0; x < clear.width; ++x) {
        const double tv = t.at(0, y, x);
        hazy.at(c, y, x) = clear.at(c, y, x) * tv + a * (1.0 - tv);
      }
  }
  return hazy;
}

// Minimum over channels and a window x window neighborhood, replicate border.
inline ImageF dark_channel(const ImageF& image, int window) {
  if (image.channels != 3)
    throw std::invalid_argument("dark_channel: needs an RGB image");
  if (window < 1 || window % 2 == 0)
    throw std::invalid_argument("dark_channel: window must be odd and >= 1");
  ImageF chan_min(1, image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      chan_min.at(0, y, x) = std::min({image.at(0, y, x), image.at(1, y, x),
                                       image.at(2, y, x)});
  if (window == 1) return chan_min;
  const int r = window / 2;
  ImageF out(1, image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double m = chan_min.at(0, y, x);
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          m = std::min(m, chan_min.at(0, detail::clampi(y + dy, 0, image.height - 1),
                                      detail::clampi(x + dx, 0, image.width - 1)));
      out.at(0, y, x) = m;
    }
  return out;
}

// Airlight estimate: per-channel mean of the hazy image over the brightest
// ceil(top_fraction * h * w) dark-channel locations; ties resolved by
// ascending row-major index.
inline std::array<double, 3> estimate_airlight(const ImageF& hazy,
                                               const DarkChannelConfig& cfg = {}) {
  if (hazy.channels != 3)
    throw std::invalid_argument("estimate_airlight: needs an RGB image");
  cfg.validate();
  const ImageF dc = dark_channel(hazy, cfg.window);
  const long n = dc.plane_size();
  const long k = static_cast<long>(
      std::ceil(cfg.top_fraction * static_cast<double>(n)));
  std::vector<long> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0L);
  std::stable_sort(idx.begin(), idx.end(), [&](long a, long b) {
    if (dc.data[a] != dc.data[b]) return dc.data[a] > dc.data[b];
    return a < b;
  });
  std::array<double, 3> a{0.0, 0.0, 0.0};
  for (long i = 0; i < k; ++i)
    for (int c = 0; c < 3; ++c)
      a[c] += hazy.data[static_cast<size_t>(c) * n + idx[static_cast<size_t>(i)]];
  for (int c = 0; c < 3; ++c) a[c] /= static_cast<double>(k);
  return a;
}

// Closed-form inversion J = (I - A) / max(t, t_min) + A, clamped to [0,1].
inline ImageF dehaze_closed_form(const ImageF& hazy, const ImageF& depth,
                                 const HazeParams& params, double t_min = 0.1) {
  if (hazy.height != depth.height || hazy.width != depth.width)
    throw std::invalid_argument("dehaze_closed_form: shape mismatch");
  if (!(t_min > 0.0 && t_min <= 1.0))
    throw std::invalid_argument("dehaze_closed_form: t_min in (0,1]");
  const ImageF t = transmission(depth, params);
  ImageF clear = constant_like(hazy, 0.0);
  for (int c = 0; c < hazy.channels; ++c) {
    const double a = params.airlight[static_cast<size_t>(c) % 3];
    for (int y = 0; y < hazy.height; ++y)
      for (int x = 0; x < hazy.width; ++x) {
        const double tc = std::max(t.at(0, y, x), t_min);
        clear.at(c, y, x) =
            std::clamp((hazy.at(c, y, x) - a) / tc + a, 0.0, 1.0);
      }
  }
  return clear;
}

// Forward reconstruction of the hazy frame from a clear frame under
// log-parameterized depth and scattering, with analytic partials:
//   Ihat      = J * t + A * (1 - t),  t = exp(-beta * d)
//   dIhat/dlog d    = (A - J) * t * beta * d   (per channel)
//   dIhat/dlog beta = (A - J) * t * beta * d
//   dIhat/dJ        = t
struct HazyReconstruction {
  ImageF reconstructed;   // Ihat, channels of `clear`
  ImageF residual;        // Ihat - hazy
  ImageF d_log_depth;     // per-channel partials
  ImageF d_log_beta;
  ImageF d_clear;         // 1-channel map t (same for all channels)
};

inline HazyReconstruction reconstruction_partials(const ImageF& hazy,
                                                  const ImageF& clear,
                                                  const ImageF& log_depth,
                                                  const ImageF& log_beta,
                                                  const std::array<double, 3>& airlight) {
  require_shape(hazy, clear, "reconstruction_partials");
  if (log_depth.channels != 1 || log_depth.height != clear.height ||
      log_depth.width != clear.width)
    throw std::invalid_argument("reconstruction_partials: log_depth shape");
  const bool scalar_beta = (log_beta.height == 1 && log_beta.width == 1);
  HazyReconstruction r;
  r.reconstructed = constant_like(clear, 0.0);
  r.residual = constant_like(clear, 0.0);
  r.d_log_depth = constant_like(clear, 0.0);
  r.d_log_beta = constant_like(clear, 0.0);
  r.d_clear = ImageF(1, clear.height, clear.width);
  for (int y = 0; y < clear.height; ++y)
    for (int x = 0; x < clear.width; ++x) {
      const double d = std::exp(log_depth.at(0, y, x));
      const double b = std::exp(scalar_beta ? log_beta.data[0] : log_beta.at(0, y, x));
      const double t = std::exp(-b * d);
      r.d_clear.at(0, y, x) = t;
      for (int c = 0; c < clear.channels; ++c) {
        const double a = airlight[static_cast<size_t>(c) % 3];
        const double j = clear.at(c, y, x);
        const double ihat = j * t + a * (1.0 - t);
        r.reconstructed.at(c, y, x) = ihat;
        r.residual.at(c, y, x) = ihat - hazy.at(c, y, x);
        const double g = (a - j) * t * b * d;
        r.d_log_depth.at(c, y, x) = g;
        r.d_log_beta.at(c, y, x) = g;
      }
    }
  return r;
}

}  // namespace hazesfm

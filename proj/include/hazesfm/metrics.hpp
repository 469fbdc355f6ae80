#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hazesfm/losses.hpp"

namespace hazesfm {

// Depth evaluation protocol: pixels with gt == 0 are invalid, gt outside the
// clamp range is excluded, predictions are clamped into the range, and with
// median scaling the prediction is pre-multiplied by median(gt)/median(pred)
// over the valid set.
struct DepthEvalConfig {
  double min_eval = 1e-3;
  double max_eval = 80.0;
  bool median_scaling = true;

  void validate() const {
    if (!(min_eval < max_eval))
      throw std::invalid_argument("DepthEvalConfig: min_eval < max_eval required");
  }
};

struct DepthMetrics {
  double abs_rel = 0;
  double rmse_log = 0;
  double delta1 = 0;
  double delta2 = 0;
  double delta3 = 0;
  long valid_pixels = 0;
};

namespace detail {
inline double median_of(std::vector<double> v) {
  const size_t k = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + k, v.end());
  double hi = v[k];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + k);
    return 0.5 * (lo + hi);
  }
  return hi;
}
}  // namespace detail

inline DepthMetrics depth_metrics(const ImageF& pred, const ImageF& gt,
                                  const DepthEvalConfig& cfg = {}) {
  require_shape(pred, gt, "depth_metrics");
  cfg.validate();
  std::vector<double> pv, gv;
  for (long i = 0; i < gt.size(); ++i) {
    const double g = gt.data[i];
    if (g > 0.0 && g >= cfg.min_eval && g <= cfg.max_eval) {
      gv.push_back(g);
      pv.push_back(pred.data[i]);
    }
  }
  if (gv.empty()) throw std::invalid_argument("depth_metrics: no valid ground truth");
  double scale = 1.0;
  if (cfg.median_scaling) {
    std::vector<double> pv_pos;
    pv_pos.reserve(pv.size());
    for (double p : pv) pv_pos.push_back(std::max(p, 1e-12));
    scale = detail::median_of(gv) / detail::median_of(pv_pos);
  }
  DepthMetrics m;
  m.valid_pixels = static_cast<long>(gv.size());
  double se_log = 0.0;
  for (size_t i = 0; i < gv.size(); ++i) {
    const double g = gv[i];
    const double p = std::clamp(pv[i] * scale, cfg.min_eval, cfg.max_eval);
    m.abs_rel += std::abs(g - p) / g;
    const double dl = std::log(g) - std::log(p);
    se_log += dl * dl;
    const double ratio = std::max(g / p, p / g);
    if (ratio < 1.25) m.delta1 += 1.0;
    if (ratio < 1.25 * 1.25) m.delta2 += 1.0;
    if (ratio < 1.25 * 1.25 * 1.25) m.delta3 += 1.0;
  }
  const double n = static_cast<double>(gv.size());
  m.abs_rel /= n;
  m.rmse_log = std::sqrt(se_log / n);
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

// PSNR over [0,1] images: 10 log10(1 / MSE); +infinity for identical inputs.
inline double psnr(const ImageF& a, const ImageF& b) {
  require_shape(a, b, "psnr");
  double mse = 0.0;
  for (long i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= a.size();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline double ssim_mean(const ImageF& a, const ImageF& b) {
  return ssim_map(a, b).mean();
}

}  // namespace hazesfm

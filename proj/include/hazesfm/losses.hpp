#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hazesfm/features.hpp"
#include "hazesfm/image.hpp"

namespace hazesfm {

// Weights of the total objective plus the photometric mix alpha.
struct LossWeights {
  double eta = 1e-1;     // reconstruction
  double gamma = 2e-1;   // misaligned reference
  double xi = 1e-3;      // edge-aware smoothness
  double omega1 = 4e-3;  // frequency/image adversarial scores
  double omega2 = 1e-3;  // depth adversarial scores
  double alpha = 0.85;   // SSIM/L1 mix in the photometric error

  void validate() const {
    if (eta < 0 || gamma < 0 || xi < 0 || omega1 < 0 || omega2 < 0)
      throw std::invalid_argument("LossWeights: weights must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw std::invalid_argument("LossWeights: alpha in [0,1]");
  }
};

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

// Per-pixel SSIM with 3x3 mean-filter statistics and replicate padding,
// averaged over channels. Values lie in [-1, 1].
inline ImageF ssim_map(const ImageF& a, const ImageF& b) {
  require_shape(a, b, "ssim_map");
  ImageF out(1, a.height, a.width, 0.0);
  for (int c = 0; c < a.channels; ++c) {
    ImageF ac = a.channel(c), bc = b.channel(c);
    ImageF aa = ac, bb = bc, ab = ac;
    for (long i = 0; i < ac.size(); ++i) {
      aa.data[i] = ac.data[i] * ac.data[i];
      bb.data[i] = bc.data[i] * bc.data[i];
      ab.data[i] = ac.data[i] * bc.data[i];
    }
    const ImageF m1 = box3(ac), m2 = box3(bc), m3 = box3(aa), m4 = box3(bb), m5 = box3(ab);
    for (long i = 0; i < out.size(); ++i) {
      const double mu_a = m1.data[i], mu_b = m2.data[i];
      const double var_a = m3.data[i] - mu_a * mu_a;
      const double var_b = m4.data[i] - mu_b * mu_b;
      const double cov = m5.data[i] - mu_a * mu_b;
      const double num = (2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2);
      const double den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2);
      out.data[i] += num / den;
    }
  }
  for (auto& v : out.data) v /= a.channels;
  return out;
}

// VJP of ssim_map for a 1-channel upstream map; accumulates into g_a / g_b.
inline void ssim_backward(const ImageF& a, const ImageF& b, const ImageF& upstream,
                          ImageF* g_a, ImageF* g_b) {
  require_shape(a, b, "ssim_backward");
  for (int c = 0; c < a.channels; ++c) {
    ImageF ac = a.channel(c), bc = b.channel(c);
    ImageF aa = ac, bb = bc, ab = ac;
    for (long i = 0; i < ac.size(); ++i) {
      aa.data[i] = ac.data[i] * ac.data[i];
      bb.data[i] = bc.data[i] * bc.data[i];
      ab.data[i] = ac.data[i] * bc.data[i];
    }
    const ImageF m1 = box3(ac), m2 = box3(bc), m3 = box3(aa), m4 = box3(bb), m5 = box3(ab);
    ImageF u1(1, a.height, a.width), u2 = u1, u3 = u1, u4 = u1, u5 = u1;
    for (long i = 0; i < u1.size(); ++i) {
      const double mu_a = m1.data[i], mu_b = m2.data[i];
      const double a1 = 2.0 * mu_a * mu_b + kSsimC1;
      const double a2 = 2.0 * (m5.data[i] - mu_a * mu_b) + kSsimC2;
      const double b1 = mu_a * mu_a + mu_b * mu_b + kSsimC1;
      const double b2 = (m3.data[i] - mu_a * mu_a) + (m4.data[i] - mu_b * mu_b) + kSsimC2;
      const double s = a1 * a2 / (b1 * b2);
      const double u = upstream.data[i] / a.channels;
      u1.data[i] = u * ((2.0 * mu_b * (a2 - a1)) / (b1 * b2) -
                        s * (2.0 * mu_a / b1 - 2.0 * mu_a / b2));
      u2.data[i] = u * ((2.0 * mu_a * (a2 - a1)) / (b1 * b2) -
                        s * (2.0 * mu_b / b1 - 2.0 * mu_b / b2));
      u3.data[i] = u * (-s / b2);
      u4.data[i] = u * (-s / b2);
      u5.data[i] = u * (2.0 * a1 / (b1 * b2));
    }
    const ImageF t1 = box3_adjoint(u1), t2 = box3_adjoint(u2), t3 = box3_adjoint(u3),
                 t4 = box3_adjoint(u4), t5 = box3_adjoint(u5);
    const long off = static_cast<long>(c) * a.plane_size();
    for (long i = 0; i < a.plane_size(); ++i) {
      if (g_a)
        g_a->data[off + i] += t1.data[i] + 2.0 * ac.data[i] * t3.data[i] +
                              bc.data[i] * t5.data[i];
      if (g_b)
        g_b->data[off + i] += t2.data[i] + 2.0 * bc.data[i] * t4.data[i] +
                              ac.data[i] * t5.data[i];
    }
  }
}

// Per-pixel photometric error: (alpha/2)(1 - SSIM) + (1 - alpha) |pred - target|_1
// with the L1 part averaged over channels.
inline ImageF photometric_error(const ImageF& pred, const ImageF& target, double alpha) {
  require_shape(pred, target, "photometric_error");
  ImageF out = ssim_map(pred, target);
  for (long i = 0; i < out.size(); ++i) out.data[i] = 0.5 * alpha * (1.0 - out.data[i]);
  for (int c = 0; c < pred.channels; ++c) {
    const long off = static_cast<long>(c) * pred.plane_size();
    for (long i = 0; i < pred.plane_size(); ++i)
      out.data[i] += (1.0 - alpha) * std::abs(pred.data[off + i] - target.data[off + i]) /
                     pred.channels;
  }
  return out;
}

inline void photometric_backward(const ImageF& pred, const ImageF& target, double alpha,
                                 const ImageF& upstream, ImageF* g_pred, ImageF* g_target) {
  ImageF ssim_up = upstream;
  for (auto& v : ssim_up.data) v *= -0.5 * alpha;
  ssim_backward(pred, target, ssim_up, g_pred, g_target);
  for (int c = 0; c < pred.channels; ++c) {
    const long off = static_cast<long>(c) * pred.plane_size();
    for (long i = 0; i < pred.plane_size(); ++i) {
      const double diff = pred.data[off + i] - target.data[off + i];
      const double s = (diff > 0.0) - (diff < 0.0);
      const double g = upstream.data[i] * (1.0 - alpha) * s / pred.channels;
      if (g_pred) g_pred->data[off + i] += g;
      if (g_target) g_target->data[off + i] -= g;
    }
  }
}

// Binary mask selecting pixels where the best warped source beats the best
// unwarped source photometrically. Pixels whose warps are all invalid get 0.
inline ImageF auto_mask(const ImageF& target, const std::vector<ImageF>& warped,
                        const std::vector<ImageF>& warp_valid,
                        const std::vector<ImageF>& sources, double alpha) {
  if (warped.empty() || sources.empty())
    throw std::invalid_argument("auto_mask: needs at least one source");
  if (warped.size() != warp_valid.size() || warped.size() != sources.size())
    throw std::invalid_argument("auto_mask: list sizes differ");
  const double inf = std::numeric_limits<double>::infinity();
  ImageF best_warp(1, target.height, target.width, inf);
  ImageF best_id(1, target.height, target.width, inf);
  for (size_t s = 0; s < warped.size(); ++s) {
    const ImageF pe_w = photometric_error(warped[s], target, alpha);
    const ImageF pe_i = photometric_error(sources[s], target, alpha);
    for (long i = 0; i < best_warp.size(); ++i) {
      const double pw = warp_valid[s].data[i] != 0.0 ? pe_w.data[i] : inf;
      if (pw < best_warp.data[i]) best_warp.data[i] = pw;
      if (pe_i.data[i] < best_id.data[i]) best_id.data[i] = pe_i.data[i];
    }
  }
  ImageF mask(1, target.height, target.width, 0.0);
  for (long i = 0; i < mask.size(); ++i)
    mask.data[i] = best_warp.data[i] < best_id.data[i] ? 1.0 : 0.0;
  return mask;
}

// Mean-normalized inverse depth: (1/d) / mean(1/d).
inline ImageF mean_normalized_inverse_depth(const ImageF& depth) {
  if (depth.min_value() <= 0.0)
    throw std::invalid_argument("mean_normalized_inverse_depth: depth must be > 0");
  ImageF q = depth;
  for (auto& v : q.data) v = 1.0 / v;
  const double m = q.mean();
  for (auto& v : q.data) v /= m;
  return q;
}

// Edge-aware smoothness: mean over pixels of
//   |dx d*| exp(-|dx ref|) + |dy d*| exp(-|dy ref|)
// with forward differences, channel-mean image gradients and d* the
// mean-normalized inverse depth. Optionally accumulates the analytic gradient
// with respect to log-depth.
inline double smoothness_loss(const ImageF& depth, const ImageF& reference,
                              ImageF* g_log_depth = nullptr) {
  if (depth.channels != 1) throw std::invalid_argument("smoothness_loss: depth 1-channel");
  if (depth.height != reference.height || depth.width != reference.width)
    throw std::invalid_argument("smoothness_loss: shape mismatch");
  if (depth.min_value() <= 0.0)
    throw std::invalid_argument("smoothness_loss: depth must be > 0");
  const int h = depth.height, w = depth.width;
  const long n = depth.plane_size();
  ImageF q = depth;
  for (auto& v : q.data) v = 1.0 / v;
  const double m = q.mean();
  ImageF dstar = q;
  for (auto& v : dstar.data) v /= m;

  auto edge_weight_x = [&](int y, int x) {
    double g = 0.0;
    for (int c = 0; c < reference.channels; ++c)
      g += std::abs(reference.at(c, y, x + 1) - reference.at(c, y, x));
    return std::exp(-g / reference.channels);
  };
  auto edge_weight_y = [&](int y, int x) {
    double g = 0.0;
    for (int c = 0; c < reference.channels; ++c)
      g += std::abs(reference.at(c, y + 1, x) - reference.at(c, y, x));
    return std::exp(-g / reference.channels);
  };

  double loss = 0.0;
  ImageF g_star(1, h, w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x + 1 < w) {
        const double t = dstar.at(0, y, x + 1) - dstar.at(0, y, x);
        const double wgt = edge_weight_x(y, x);
        loss += std::abs(t) * wgt;
        if (g_log_depth) {
          const double s = ((t > 0.0) - (t < 0.0)) * wgt / n;
          g_star.at(0, y, x + 1) += s;
          g_star.at(0, y, x) -= s;
        }
      }
      if (y + 1 < h) {
        const double t = dstar.at(0, y + 1, x) - dstar.at(0, y, x);
        const double wgt = edge_weight_y(y, x);
        loss += std::abs(t) * wgt;
        if (g_log_depth) {
          const double s = ((t > 0.0) - (t < 0.0)) * wgt / n;
          g_star.at(0, y + 1, x) += s;
          g_star.at(0, y, x) -= s;
        }
      }
    }
  loss /= n;

  if (g_log_depth) {
    double dot = 0.0;  // sum_i g_star_i * q_i
    for (long i = 0; i < n; ++i) dot += g_star.data[i] * q.data[i];
    for (long i = 0; i < n; ++i) {
      const double dldq = g_star.data[i] / m - dot / (m * m * n);
      g_log_depth->data[i] += -q.data[i] * dldq;
    }
  }
  return loss;
}

// Cosine distance between two flattened feature stacks; returns 1 for a level
// with a zero-norm vector and reports it through `degenerate`.
inline double cosine_distance(const ImageF& f1, const ImageF& f2, bool* degenerate,
                              ImageF* g1, ImageF* g2) {
  require_shape(f1, f2, "cosine_distance");
  double n1 = 0.0, n2 = 0.0, dot = 0.0;
  for (long i = 0; i < f1.size(); ++i) {
    n1 += f1.data[i] * f1.data[i];
    n2 += f2.data[i] * f2.data[i];
    dot += f1.data[i] * f2.data[i];
  }
  n1 = std::sqrt(n1);
  n2 = std::sqrt(n2);
  if (n1 == 0.0 || n2 == 0.0) {
    if (degenerate) *degenerate = true;
    return 1.0;  // gradient treated as zero for the degenerate level
  }
  const double cosv = dot / (n1 * n2);
  if (g1)
    for (long i = 0; i < f1.size(); ++i)
      g1->data[i] += -(f2.data[i] / (n1 * n2) - cosv * f1.data[i] / (n1 * n1));
  if (g2)
    for (long i = 0; i < f2.size(); ++i)
      g2->data[i] += -(f1.data[i] / (n1 * n2) - cosv * f2.data[i] / (n2 * n2));
  return 1.0 - cosv;
}

// Sum over feature levels of the cosine distance between the two images'
// feature stacks; in [0, 2 * levels].
inline double misaligned_reference_loss(const ImageF& image, const ImageF& reference,
                                        const FeatureExtractor& feat,
                                        ImageF* g_image = nullptr,
                                        int* degenerate_levels = nullptr) {
  require_shape(image, reference, "misaligned_reference_loss");
  const std::vector<ImageF> fa = feat.features(image);
  const std::vector<ImageF> fb = feat.features(reference);
  double loss = 0.0;
  std::vector<ImageF> upstream;
  upstream.reserve(fa.size());
  int degen = 0;
  for (size_t l = 0; l < fa.size(); ++l) {
    bool bad = false;
    ImageF g = constant_like(fa[l], 0.0);
    loss += cosine_distance(fa[l], fb[l], &bad, g_image ? &g : nullptr, nullptr);
    if (bad) ++degen;
    upstream.push_back(std::move(g));
  }
  if (g_image) feat.backward(image, upstream, g_image);
  if (degenerate_levels) *degenerate_levels = degen;
  return loss;
}

// Reconstruction loss: mean L1 + (1 - mean SSIM)/2 + mean over levels of the
// feature cosine distance. Zero exactly on identical inputs. The gradient is
// taken with respect to the `candidate` argument.
inline double reconstruction_loss(const ImageF& reference, const ImageF& candidate,
                                  const FeatureExtractor& feat,
                                  ImageF* g_candidate = nullptr) {
  require_shape(reference, candidate, "reconstruction_loss");
  const long n = candidate.size();
  double l1 = 0.0;
  for (long i = 0; i < n; ++i) l1 += std::abs(reference.data[i] - candidate.data[i]);
  l1 /= n;
  const ImageF smap = ssim_map(reference, candidate);
  const double ssim_mean_v = smap.mean();
  const double ssim_term = 0.5 * (1.0 - ssim_mean_v);

  const std::vector<ImageF> fa = feat.features(reference);
  const std::vector<ImageF> fb = feat.features(candidate);
  double perc = 0.0;
  std::vector<ImageF> upstream;
  upstream.reserve(fb.size());
  for (size_t l = 0; l < fa.size(); ++l) {
    ImageF g = constant_like(fb[l], 0.0);
    perc += cosine_distance(fa[l], fb[l], nullptr, nullptr, g_candidate ? &g : nullptr);
    upstream.push_back(std::move(g));
  }
  const double levels = fa.empty() ? 1.0 : static_cast<double>(fa.size());
  perc /= levels;

  if (g_candidate) {
    for (long i = 0; i < n; ++i) {
      const double diff = candidate.data[i] - reference.data[i];
      g_candidate->data[i] += ((diff > 0.0) - (diff < 0.0)) / static_cast<double>(n);
    }
    ImageF ssim_up(1, candidate.height, candidate.width,
                   -0.5 / static_cast<double>(smap.size()));
    ssim_backward(reference, candidate, ssim_up, nullptr, g_candidate);
    for (auto& g : upstream)
      for (auto& v : g.data) v /= levels;
    feat.backward(candidate, upstream, g_candidate);
  }
  return l1 + ssim_term + perc;
}

// Least-squares adversarial objectives over external score maps.
inline double lsgan_d_loss(const ImageF& real, const ImageF& fake) {
  if (real.empty() || fake.empty()) throw std::invalid_argument("lsgan_d_loss: empty map");
  double lr = 0.0, lf = 0.0;
  for (double v : real.data) lr += (v - 1.0) * (v - 1.0);
  for (double v : fake.data) lf += v * v;
  return lr / real.size() + lf / fake.size();
}

inline double lsgan_g_loss(const ImageF& fake) {
  if (fake.empty()) throw std::invalid_argument("lsgan_g_loss: empty map");
  double l = 0.0;
  for (double v : fake.data) l += (v - 1.0) * (v - 1.0);
  return l / fake.size();
}

// mu(d) = d / mean(d); removes the monocular scale gauge.
inline ImageF normalize_depth(const ImageF& depth) {
  if (depth.min_value() <= 0.0)
    throw std::invalid_argument("normalize_depth: depth must be > 0");
  ImageF out = depth;
  const double m = depth.mean();
  for (auto& v : out.data) v /= m;
  return out;
}

}  // namespace hazesfm

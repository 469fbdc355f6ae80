#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hazesfm/features.hpp"
#include "hazesfm/geometry.hpp"
#include "hazesfm/image.hpp"
#include "hazesfm/losses.hpp"
#include "hazesfm/parallel.hpp"
#include "hazesfm/scattering.hpp"

namespace hazesfm {

// Direct joint estimation of per-pixel log-depth, log-scattering and source
// poses from a short hazy window, by first-order minimization of the weighted
// loss stack with a coarse-to-fine schedule.
//
// Dehazing modes:
//   kTied : dehazed frames are closed-form functions of the current depth and
//           scattering (fewest variables, scattering-consistent by
//           construction). Warped source values are dehazed with the
//           transformed depth of the sampled point.
//   kFree : dehazed frames are free per-pixel variables, anchored by the
//           reconstruction term.
enum class DehazeMode { kTied, kFree };

// Scattering parameterization: one log value, a per-pixel log field, or a
// fixed (non-optimized) constant, which is the only way to express beta == 0.
enum class BetaMode { kScalar, kField, kFixed };

// Domain of the brightness-consistency comparison. kHazy pushes the warped
// prediction back through the forward scattering model and compares against
// the observed frame; kDehazed compares dehazed frames directly. The hazy
// form is the default: comparing dehazed frames rewards weaker dehazing
// (residuals shrink with the restored contrast), a degeneracy the adversarial
// terms would otherwise hold off, while the observation-space residual is
// contrast-anchored and has the same minimizer.
enum class PhotometricSpace { kHazy, kDehazed };

struct OptimConfig {
  DehazeMode mode = DehazeMode::kTied;
  BetaMode beta_mode = BetaMode::kScalar;
  PhotometricSpace pe_space = PhotometricSpace::kHazy;
  double fixed_beta = 0.0;
  LossWeights weights;
  double pe_weight = 1.0;  // coefficient of the masked photometric term
  // Anti-aliased photometric measurement: the warp averages four
  // quarter-pixel-offset bilinear samples and the comparison target is
  // pre-filtered with the moment-matched 3-tap kernel. Equalizing the blur on
  // both sides removes the incentive to snap sample coordinates onto the
  // pixel grid, which otherwise scores below the true geometry.
  bool antialias_warp = true;

  double lr_log_depth = 2e-2;
  double lr_log_beta = 1e-1;
  double lr_pose = 2e-3;
  double lr_dehazed = 2e-2;

  int max_iterations = 400;  // per pyramid level
  int pyramid_levels = 3;
  double tolerance = 1e-6;
  int tolerance_window = 20;
  int divergence_window = 50;

  double depth_min = 0.1, depth_max = 100.0;
  double beta_min = 1e-4, beta_max = 2.0;
  double t_min = 0.1;
  double init_depth = 0.0;  // <= 0 means geometric mean of the depth bounds
  double init_beta = 0.02;
  double beta_smooth_weight = 1e-3;  // extra smoothness on a per-pixel beta field

  double adam_beta1 = 0.9, adam_beta2 = 0.99, adam_eps = 1e-8;

  bool deterministic = true;
  uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    weights.validate();
    if (!(depth_min < depth_max) || depth_min <= 0.0)
      throw std::invalid_argument("OptimConfig: bad depth bounds");
    if (!(beta_min < beta_max) || beta_min <= 0.0)
      throw std::invalid_argument("OptimConfig: bad beta bounds");
    if (lr_log_depth <= 0 || lr_log_beta <= 0 || lr_pose <= 0 || lr_dehazed <= 0)
      throw std::invalid_argument("OptimConfig: learning rates must be > 0");
    if (!(t_min > 0.0 && t_min <= 1.0))
      throw std::invalid_argument("OptimConfig: t_min in (0,1]");
    if (pyramid_levels < 1 || max_iterations < 1)
      throw std::invalid_argument("OptimConfig: pyramid_levels and max_iterations >= 1");
  }
};

struct AdamMoments {
  std::vector<double> m, v;
  void reset(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

struct OptimState {
  ImageF log_depth;  // 1xhxw
  ImageF log_beta;   // 1xhxw (field) or 1x1x1 (scalar); empty in fixed mode
  double fixed_beta = 0.0;
  std::vector<PoseSE3> poses;    // one per source frame, sequence order
  std::vector<ImageF> dehazed;   // free mode only: one per frame
  AdamMoments mom_depth, mom_beta, mom_pose, mom_dehazed;
  long iteration = 0;
};

struct ObjectiveTerms {
  double total = 0;
  double rec = 0;          // unweighted reconstruction term
  double photometric = 0;  // masked mean photometric error
  double smooth = 0;       // unweighted smoothness
  double reference = 0;    // unweighted misaligned-reference term
  double adversarial = 0;  // weighted score-map terms (constant w.r.t. state)
  double beta_smooth = 0;  // unweighted beta-field smoothness
  double mask_density = 0;
};

struct ObjectiveGradients {
  ImageF log_depth;
  ImageF log_beta;  // matches the state's beta shape; empty in fixed mode
  std::vector<std::array<double, 6>> poses;
  std::vector<ImageF> dehazed;  // free mode only
};

// Optional inputs: a non-aligned clear reference activates the gamma term;
// external discriminator score maps activate the omega terms (constants with
// respect to the optimized variables, reported for completeness).
struct ObjectiveInputs {
  const ImageF* reference = nullptr;
  const ImageF* image_scores_real = nullptr;
  const ImageF* image_scores_fake = nullptr;
  const ImageF* depth_scores_real = nullptr;
  const ImageF* depth_scores_fake = nullptr;
};

// Snapshot of every piecewise-linear decision taken at an operating point:
// clamp states, transmission-floor activity, warp validity, the auto-mask and
// the per-pixel source selection. Evaluating the objective against a frozen
// snapshot yields a function that is smooth in the parameters, which is what
// both the analytic gradient and its finite-difference oracle differentiate.
struct FrozenActivity {
  bool valid = false;
  ImageF t_active;                      // 1: transmission above the floor
  std::vector<ImageF> frame_clamp;      // per frame, 3ch: -1 low, 0 free, +1 high
  std::vector<ImageF> warp_t_active;    // per source
  std::vector<ImageF> warp_clamp;       // per source, 3ch
  std::vector<ImageF> warp_valid;       // per source
  ImageF mask;
  ImageF source_sel;  // source index per pixel, -1 when masked out
};

namespace opt_detail {

// Supersampling offsets per axis. Four phases make the effective kernel's
// second moment nearly independent of the fractional coordinate (0.25 per
// axis up to +-0.004), which the matched 3-tap blur reproduces exactly with
// coefficient 1/8.
constexpr double kWarpPhases[4] = {-0.375, -0.125, 0.125, 0.375};
constexpr int kWarpSamples = 16;
constexpr double kMatchedBlur = 0.125;

inline void warp_offset(int o, double* dx, double* dy) {
  *dx = kWarpPhases[o % 4];
  *dy = kWarpPhases[o / 4];
}

inline double beta_value(const OptimState& st, BetaMode mode, int y, int x) {
  switch (mode) {
    case BetaMode::kFixed:
      return st.fixed_beta;
    case BetaMode::kScalar:
      return std::exp(st.log_beta.data[0]);
    case BetaMode::kField:
      return std::exp(st.log_beta.at(0, y, x));
  }
  return 0.0;
}

// Clamp code of a raw value against [0,1].
inline int clamp_code(double v) { return v < 0.0 ? -1 : (v > 1.0 ? 1 : 0); }

inline double coded_value(double raw, int code) {
  return code < 0 ? 0.0 : (code > 0 ? 1.0 : raw);
}

}  // namespace opt_detail

// Evaluates the implemented total objective
//   eta * L_rec + masked mean of L_pe + xi * L_s (+ gamma * L_mr) (+ omega terms)
// and, when requested, its analytic gradients per parameter block. The
// auto-mask and per-pixel source selection are recomputed each call and
// treated as constants during differentiation. Passing `frozen` evaluates
// against a previously captured activity snapshot instead; passing `capture`
// records one.
inline ObjectiveTerms objective(const OptimState& state, const FrameSequence& seq,
                                const std::array<double, 3>& airlight,
                                const OptimConfig& cfg, const ObjectiveInputs& inputs,
                                ObjectiveGradients* grads = nullptr,
                                const FrozenActivity* frozen = nullptr,
                                FrozenActivity* capture = nullptr) {
  seq.validate();
  cfg.validate();
  const int target = seq.target_index();
  const int h = seq.frames.front().height;
  const int w = seq.frames.front().width;
  const int frame_count = static_cast<int>(seq.frames.size());
  const int source_count = frame_count - 1;
  const long n_pix = static_cast<long>(h) * w;
  const bool tied = cfg.mode == DehazeMode::kTied;
  const LossWeights& lw = cfg.weights;
  const double inf = std::numeric_limits<double>::infinity();

  if (state.log_depth.height != h || state.log_depth.width != w)
    throw std::invalid_argument("objective: log_depth shape mismatch");
  if (static_cast<int>(state.poses.size()) != source_count)
    throw std::invalid_argument("objective: pose count mismatch");
  if (!tied && static_cast<int>(state.dehazed.size()) != frame_count)
    throw std::invalid_argument("objective: free mode needs one dehazed frame per frame");

  // --- shared per-pixel quantities -------------------------------------
  ImageF depth(1, h, w), beta_map(1, h, w), t_raw(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = std::exp(state.log_depth.at(0, y, x));
      const double b = opt_detail::beta_value(state, cfg.beta_mode, y, x);
      depth.at(0, y, x) = d;
      beta_map.at(0, y, x) = b;
      t_raw.at(0, y, x) = std::exp(-b * d);
    }

  FrozenActivity scratch;
  FrozenActivity* cap = capture ? capture : &scratch;
  if (capture || !frozen) {
    cap->t_active = ImageF(1, h, w, 0.0);
    for (long i = 0; i < n_pix; ++i)
      cap->t_active.data[i] = t_raw.data[i] > cfg.t_min ? 1.0 : 0.0;
  }
  const ImageF& t_active = frozen ? frozen->t_active : cap->t_active;
  ImageF t_clamped(1, h, w);
  for (long i = 0; i < n_pix; ++i)
    t_clamped.data[i] = t_active.data[i] != 0.0 ? t_raw.data[i] : cfg.t_min;

  // --- dehazed frames ---------------------------------------------------
  std::vector<ImageF> dehazed(static_cast<size_t>(frame_count));
  if (capture || !frozen) cap->frame_clamp.assign(static_cast<size_t>(frame_count), ImageF());
  for (int f = 0; f < frame_count; ++f) {
    if (!tied) {
      dehazed[f] = state.dehazed[f];
      continue;
    }
    const ImageF& hazy = seq.frames[f];
    ImageF out(3, h, w);
    ImageF codes(3, h, w, 0.0);
    const ImageF* fcodes = frozen ? &frozen->frame_clamp[f] : nullptr;
    for (int c = 0; c < 3; ++c) {
      const double a = airlight[c];
      for (long i = 0; i < n_pix; ++i) {
        const long idx = static_cast<size_t>(c) * n_pix + i;
        const double raw = (hazy.data[idx] - a) / t_clamped.data[i] + a;
        const int code = fcodes ? static_cast<int>(fcodes->data[idx])
                                : opt_detail::clamp_code(raw);
        out.data[idx] = opt_detail::coded_value(raw, code);
        codes.data[idx] = code;
      }
    }
    dehazed[f] = std::move(out);
    if (capture || !frozen) cap->frame_clamp[f] = std::move(codes);
  }
  const ImageF& dehazed_target = dehazed[static_cast<size_t>(target)];

  // --- per-source warps -------------------------------------------------
  // The photometric prediction per source. In hazy space the prediction is
  // the warped sample re-synthesized under the target's transmission,
  //   pred = (sample - A) * t_raw / t'_c + A        (tied)
  //   pred = sample * t_raw + A (1 - t_raw)          (free)
  // compared against the observed frame; in dehazed space it is the dehazed
  // warped sample compared against the dehazed target.
  const bool hazy_pe = cfg.pe_space == PhotometricSpace::kHazy;
  const ImageF& pe_target_raw = hazy_pe ? seq.frames[static_cast<size_t>(target)]
                                        : dehazed_target;
  const ImageF pe_target =
      cfg.antialias_warp ? triangle_blur3(pe_target_raw, opt_detail::kMatchedBlur)
                         : pe_target_raw;
  const int sample_count = cfg.antialias_warp ? opt_detail::kWarpSamples : 1;
  struct SourceEval {
    int frame = 0;
    ReprojectResult rp;
    std::vector<ImageF> offset_coords;  // one or four coordinate images
    std::vector<WarpResult> samples;
    ImageF sampled;         // averaged warp of the hazy (tied) or dehazed (free) frame
    ImageF valid;           // usable pixels
    ImageF t_warp_raw;      // tied: exp(-beta * z')
    ImageF t_warp_clamped;
    ImageF prediction;
    ImageF pe;
    ImageF pe_identity;
  };
  std::vector<SourceEval> sources(static_cast<size_t>(source_count));
  if (capture || !frozen) {
    cap->warp_t_active.assign(static_cast<size_t>(source_count), ImageF());
    cap->warp_clamp.assign(static_cast<size_t>(source_count), ImageF());
    cap->warp_valid.assign(static_cast<size_t>(source_count), ImageF());
  }

  parallel_chunks(source_count, cfg.threads, [&](long s0, long s1) {
    for (long s = s0; s < s1; ++s) {
      SourceEval& ev = sources[static_cast<size_t>(s)];
      ev.frame = s < target ? static_cast<int>(s) : static_cast<int>(s) + 1;
      ev.rp = reproject(depth, state.poses[static_cast<size_t>(s)], seq.intrinsics);
      const ImageF& warp_src = tied ? seq.frames[ev.frame] : dehazed[ev.frame];
      ImageF live_valid(1, h, w, 0.0);
      for (long i = 0; i < n_pix; ++i)
        live_valid.data[i] = ev.rp.valid.data[i];
      for (int o = 0; o < sample_count; ++o) {
        ImageF coords = ev.rp.coords;
        if (cfg.antialias_warp) {
          double dx = 0.0, dy = 0.0;
          opt_detail::warp_offset(o, &dx, &dy);
          for (long i = 0; i < n_pix; ++i) {
            coords.data[i] += dx;
            coords.data[n_pix + i] += dy;
          }
        }
        ev.samples.push_back(bilinear_sample(warp_src, coords));
        ev.offset_coords.push_back(std::move(coords));
        for (long i = 0; i < n_pix; ++i)
          if (ev.samples.back().valid.data[i] == 0.0) live_valid.data[i] = 0.0;
      }
      ev.sampled = ImageF(3, h, w, 0.0);
      for (int o = 0; o < sample_count; ++o)
        for (long i = 0; i < ev.sampled.size(); ++i)
          ev.sampled.data[i] += ev.samples[static_cast<size_t>(o)].warped.data[i] /
                                sample_count;
      ev.valid = frozen ? frozen->warp_valid[static_cast<size_t>(s)] : live_valid;
      if (capture || !frozen) cap->warp_valid[static_cast<size_t>(s)] = live_valid;

      if (tied) {
        ev.t_warp_raw = ImageF(1, h, w, 1.0);
        ev.t_warp_clamped = ImageF(1, h, w, 1.0);
        ImageF t_act(1, h, w, 0.0);
        const ImageF* frozen_act = frozen ? &frozen->warp_t_active[s] : nullptr;
        for (long i = 0; i < n_pix; ++i) {
          if (ev.valid.data[i] == 0.0) continue;
          const double z = std::max(ev.rp.source_depth.data[i], kMinProjectedDepth);
          const double tr = std::exp(-beta_map.data[i] * z);
          ev.t_warp_raw.data[i] = tr;
          const bool active = frozen_act ? frozen_act->data[i] != 0.0 : tr > cfg.t_min;
          t_act.data[i] = active ? 1.0 : 0.0;
          ev.t_warp_clamped.data[i] = active ? tr : cfg.t_min;
        }
        if (capture || !frozen) cap->warp_t_active[s] = std::move(t_act);

        ev.prediction = ImageF(3, h, w);
        ImageF codes(3, h, w, 0.0);
        const ImageF* fcodes = frozen ? &frozen->warp_clamp[s] : nullptr;
        for (int c = 0; c < 3; ++c) {
          const double a = airlight[c];
          for (long i = 0; i < n_pix; ++i) {
            const long idx = static_cast<size_t>(c) * n_pix + i;
            if (ev.valid.data[i] == 0.0) {
              // Outside the usable warp the prediction falls back to the
              // target so border pixels stay photometrically neutral.
              ev.prediction.data[idx] = pe_target.data[idx];
              codes.data[idx] = 0.0;
              continue;
            }
            const double scale = hazy_pe ? t_raw.data[i] / ev.t_warp_clamped.data[i]
                                         : 1.0 / ev.t_warp_clamped.data[i];
            const double raw = (ev.sampled.data[idx] - a) * scale + a;
            const int code = fcodes ? static_cast<int>(fcodes->data[idx])
                                    : opt_detail::clamp_code(raw);
            ev.prediction.data[idx] = opt_detail::coded_value(raw, code);
            codes.data[idx] = code;
          }
        }
        if (capture || !frozen) cap->warp_clamp[s] = std::move(codes);
      } else {
        ev.prediction = ImageF(3, h, w);
        ImageF codes(3, h, w, 0.0);
        const ImageF* fcodes = frozen ? &frozen->warp_clamp[s] : nullptr;
        for (int c = 0; c < 3; ++c) {
          const double a = airlight[c];
          for (long i = 0; i < n_pix; ++i) {
            const long idx = static_cast<size_t>(c) * n_pix + i;
            if (ev.valid.data[i] == 0.0) {
              ev.prediction.data[idx] = pe_target.data[idx];
              codes.data[idx] = 0.0;
              continue;
            }
            if (hazy_pe) {
              const double raw = ev.sampled.data[idx] * t_raw.data[i] +
                                 a * (1.0 - t_raw.data[i]);
              const int code = fcodes ? static_cast<int>(fcodes->data[idx])
                                      : opt_detail::clamp_code(raw);
              ev.prediction.data[idx] = opt_detail::coded_value(raw, code);
              codes.data[idx] = code;
            } else {
              ev.prediction.data[idx] = ev.sampled.data[idx];
            }
          }
        }
        if (capture || !frozen) {
          cap->warp_t_active[s] = ImageF(1, h, w, 1.0);
          cap->warp_clamp[s] = std::move(codes);
        }
      }
      ev.pe = photometric_error(ev.prediction, pe_target, lw.alpha);
      const ImageF& identity_raw = hazy_pe ? seq.frames[ev.frame] : dehazed[ev.frame];
      const ImageF identity_pred =
          cfg.antialias_warp ? triangle_blur3(identity_raw, opt_detail::kMatchedBlur)
                             : identity_raw;
      ev.pe_identity = photometric_error(identity_pred, pe_target, lw.alpha);
    }
  });

  // --- auto-mask and per-pixel source selection -------------------------
  ImageF mask, sel;
  if (frozen) {
    mask = frozen->mask;
    sel = frozen->source_sel;
  } else {
    mask = ImageF(1, h, w, 0.0);
    sel = ImageF(1, h, w, -1.0);
    for (long i = 0; i < n_pix; ++i) {
      double best_warp = inf, best_id = inf;
      int best_s = -1;
      for (int s = 0; s < source_count; ++s) {
        const SourceEval& ev = sources[static_cast<size_t>(s)];
        if (ev.valid.data[i] != 0.0 && ev.pe.data[i] < best_warp) {
          best_warp = ev.pe.data[i];
          best_s = s;
        }
        if (ev.pe_identity.data[i] < best_id) best_id = ev.pe_identity.data[i];
      }
      if (best_s >= 0 && best_warp < best_id) {
        mask.data[i] = 1.0;
        sel.data[i] = best_s;
      }
    }
  }
  if (capture) {
    capture->mask = mask;
    capture->source_sel = sel;
    capture->valid = true;
  }

  double mask_sum = 0.0;
  for (long i = 0; i < n_pix; ++i) mask_sum += mask.data[i];
  const double mask_norm = std::max(1.0, mask_sum);

  ObjectiveTerms terms;
  terms.mask_density = mask_sum / static_cast<double>(n_pix);
  terms.photometric = blocked_sum(n_pix, cfg.threads, [&](long i) {
    if (mask.data[i] == 0.0) return 0.0;
    const int s = static_cast<int>(sel.data[i]);
    return sources[static_cast<size_t>(s)].pe.data[i];
  }) / mask_norm;

  // --- gradient accumulators --------------------------------------------
  const bool field_beta = cfg.beta_mode == BetaMode::kField;
  ImageF g_logd, g_logb;
  std::vector<ImageF> g_dehazed_frames;  // d(total)/d(J_f), chained at the end
  if (grads) {
    grads->log_depth = ImageF(1, h, w, 0.0);
    if (cfg.beta_mode == BetaMode::kScalar)
      grads->log_beta = ImageF(1, 1, 1, 0.0);
    else if (field_beta)
      grads->log_beta = ImageF(1, h, w, 0.0);
    else
      grads->log_beta = ImageF();
    grads->poses.assign(static_cast<size_t>(source_count), std::array<double, 6>{});
    grads->dehazed.clear();
    if (!tied)
      for (int f = 0; f < frame_count; ++f) grads->dehazed.push_back(ImageF(3, h, w, 0.0));
    g_logd = ImageF(1, h, w, 0.0);
    g_logb = ImageF(1, h, w, 0.0);  // per-pixel; reduced for the scalar case
    for (int f = 0; f < frame_count; ++f) g_dehazed_frames.push_back(ImageF(3, h, w, 0.0));
  }

  // Photometric backward: route upstream into the prediction and, in dehazed
  // space, into the dehazed target (the hazy-space target is an observation).
  std::vector<ImageF> g_pred(static_cast<size_t>(source_count));
  if (grads) {
    std::vector<ImageF> g_target_per_source(static_cast<size_t>(source_count));
    parallel_chunks(source_count, cfg.threads, [&](long s0, long s1) {
      for (long s = s0; s < s1; ++s) {
        SourceEval& ev = sources[static_cast<size_t>(s)];
        ImageF upstream(1, h, w, 0.0);
        bool any = false;
        for (long i = 0; i < n_pix; ++i)
          if (mask.data[i] != 0.0 && static_cast<int>(sel.data[i]) == s) {
            upstream.data[i] = cfg.pe_weight / mask_norm;
            any = true;
          }
        any = any && cfg.pe_weight != 0.0;
        g_pred[s] = ImageF(3, h, w, 0.0);
        g_target_per_source[s] = ImageF(3, h, w, 0.0);
        if (any)
          photometric_backward(ev.prediction, pe_target, lw.alpha, upstream,
                               &g_pred[s], hazy_pe ? nullptr : &g_target_per_source[s]);
      }
    });
    if (!hazy_pe) {
      // Both the target side of the photometric error and the invalid-pixel
      // pins are functions of the (blurred) dehazed target.
      ImageF g_blurred(3, h, w, 0.0);
      for (int s = 0; s < source_count; ++s)
        for (int c = 0; c < 3; ++c)
          for (long i = 0; i < n_pix; ++i) {
            const long idx = static_cast<size_t>(c) * n_pix + i;
            g_blurred.data[idx] += g_target_per_source[s].data[idx];
            if (sources[static_cast<size_t>(s)].valid.data[i] == 0.0)
              g_blurred.data[idx] += g_pred[s].data[idx];
          }
      const ImageF g_tgt = cfg.antialias_warp
                               ? triangle_blur3_adjoint(g_blurred, opt_detail::kMatchedBlur)
                               : g_blurred;
      for (long i = 0; i < g_tgt.size(); ++i)
        g_dehazed_frames[target].data[i] += g_tgt.data[i];
    }
  }

  // --- reconstruction term ----------------------------------------------
  PyramidFeatureExtractor feat(5);
  ImageF g_traw;  // shared per-pixel accumulator for d(total)/d(t_raw)
  if (grads) g_traw = ImageF(1, h, w, 0.0);
  {
    double rec_sum = 0.0;
    for (int f = 0; f < frame_count; ++f) {
      const ImageF& hazy = seq.frames[f];
      ImageF ihat(3, h, w);
      for (int c = 0; c < 3; ++c) {
        const double a = airlight[c];
        for (long i = 0; i < n_pix; ++i) {
          const long idx = static_cast<size_t>(c) * n_pix + i;
          ihat.data[idx] =
              dehazed[f].data[idx] * t_raw.data[i] + a * (1.0 - t_raw.data[i]);
        }
      }
      if (grads && lw.eta > 0.0) {
        ImageF g_ihat(3, h, w, 0.0);
        rec_sum += reconstruction_loss(hazy, ihat, feat, &g_ihat);
        const double scale = 1.0 / frame_count;
        for (int c = 0; c < 3; ++c) {
          const double a = airlight[c];
          for (long i = 0; i < n_pix; ++i) {
            const long idx = static_cast<size_t>(c) * n_pix + i;
            const double g = lw.eta * scale * g_ihat.data[idx];
            g_dehazed_frames[f].data[idx] += g * t_raw.data[i];
            g_traw.data[i] += g * (dehazed[f].data[idx] - a);
          }
        }
      } else {
        rec_sum += reconstruction_loss(hazy, ihat, feat);
      }
    }
    terms.rec = rec_sum / frame_count;
  }

  // --- smoothness, reference and score terms -----------------------------
  {
    ImageF g_smooth(1, h, w, 0.0);
    terms.smooth = smoothness_loss(depth, seq.frames[target],
                                   grads && lw.xi > 0.0 ? &g_smooth : nullptr);
    if (grads && lw.xi > 0.0)
      for (long i = 0; i < n_pix; ++i) g_logd.data[i] += lw.xi * g_smooth.data[i];
  }
  if (field_beta && cfg.beta_smooth_weight > 0.0) {
    ImageF beta_field(1, h, w);
    for (long i = 0; i < n_pix; ++i) beta_field.data[i] = beta_map.data[i];
    ImageF g_bs(1, h, w, 0.0);
    terms.beta_smooth =
        smoothness_loss(beta_field, seq.frames[target], grads ? &g_bs : nullptr);
    if (grads)
      for (long i = 0; i < n_pix; ++i)
        g_logb.data[i] += cfg.beta_smooth_weight * g_bs.data[i];
  }
  if (inputs.reference) {
    ImageF g_ref(3, h, w, 0.0);
    terms.reference = misaligned_reference_loss(
        dehazed_target, *inputs.reference, feat,
        grads && lw.gamma > 0.0 ? &g_ref : nullptr);
    if (grads && lw.gamma > 0.0)
      for (long i = 0; i < g_ref.size(); ++i)
        g_dehazed_frames[target].data[i] += lw.gamma * g_ref.data[i];
  }
  if (inputs.image_scores_fake) {
    double adv = lsgan_g_loss(*inputs.image_scores_fake);
    if (inputs.image_scores_real)
      adv += lsgan_d_loss(*inputs.image_scores_real, *inputs.image_scores_fake);
    terms.adversarial += lw.omega1 * adv;
  }
  if (inputs.depth_scores_fake) {
    double adv = lsgan_g_loss(*inputs.depth_scores_fake);
    if (inputs.depth_scores_real)
      adv += lsgan_d_loss(*inputs.depth_scores_real, *inputs.depth_scores_fake);
    terms.adversarial += lw.omega2 * adv;
  }

  terms.total = lw.eta * terms.rec + cfg.pe_weight * terms.photometric +
                lw.xi * terms.smooth + lw.gamma * terms.reference + terms.adversarial +
                cfg.beta_smooth_weight * terms.beta_smooth;
  for (double t : {terms.rec, terms.photometric, terms.smooth, terms.reference,
                   terms.adversarial, terms.beta_smooth})
    if (!std::isfinite(t))
      throw std::runtime_error("objective: non-finite loss term (rec/pe/smooth/ref/adv)");

  if (!grads) return terms;

  // --- chain rule through the warped predictions -------------------------
  for (int s = 0; s < source_count; ++s) {
    SourceEval& ev = sources[static_cast<size_t>(s)];
    ImageF g_coords(2, h, w, 0.0);
    ImageF g_zprime(1, h, w, 0.0);
    const ImageF& codes = frozen ? frozen->warp_clamp[s] : cap->warp_clamp[s];
    if (tied) {
      ImageF g_sampled(3, h, w, 0.0);
      const ImageF& t_act = frozen ? frozen->warp_t_active[s] : cap->warp_t_active[s];
      for (long i = 0; i < n_pix; ++i) {
        if (ev.valid.data[i] == 0.0) continue;  // pin handled with the target side
        const double tc = ev.t_warp_clamped.data[i];
        const double scale = hazy_pe ? t_raw.data[i] / tc : 1.0 / tc;
        double g_scale = 0.0;
        for (int c = 0; c < 3; ++c) {
          const long idx = static_cast<size_t>(c) * n_pix + i;
          if (codes.data[idx] != 0.0) continue;  // clamped: constant
          const double gj = g_pred[s].data[idx];
          g_sampled.data[idx] += gj * scale;
          g_scale += gj * (ev.sampled.data[idx] - airlight[c]);
        }
        double g_tc = 0.0;
        if (hazy_pe) {
          g_traw.data[i] += g_scale / tc;
          g_tc = -g_scale * t_raw.data[i] / (tc * tc);
        } else {
          g_tc = -g_scale / (tc * tc);
        }
        if (t_act.data[i] != 0.0) {
          const double tr = ev.t_warp_raw.data[i];
          const double z = std::max(ev.rp.source_depth.data[i], kMinProjectedDepth);
          const double b = beta_map.data[i];
          g_zprime.data[i] += g_tc * (-b * tr);
          g_logb.data[i] += g_tc * (-b * z * tr);
        }
      }
      for (size_t o = 0; o < ev.samples.size(); ++o) {
        ImageF g_each = g_sampled;
        for (auto& v : g_each.data) v /= static_cast<double>(ev.samples.size());
        bilinear_sample_backward(seq.frames[ev.frame], ev.offset_coords[o], ev.valid,
                                 g_each, nullptr, &g_coords);
      }
    } else {
      ImageF g_sampled(3, h, w, 0.0);
      for (long i = 0; i < n_pix; ++i) {
        if (ev.valid.data[i] == 0.0) continue;  // pin handled with the target side
        for (int c = 0; c < 3; ++c) {
          const long idx = static_cast<size_t>(c) * n_pix + i;
          if (hazy_pe) {
            if (codes.data[idx] != 0.0) continue;
            const double gj = g_pred[s].data[idx];
            g_sampled.data[idx] += gj * t_raw.data[i];
            g_traw.data[i] += gj * (ev.sampled.data[idx] - airlight[c]);
          } else {
            g_sampled.data[idx] += g_pred[s].data[idx];
          }
        }
      }
      for (size_t o = 0; o < ev.samples.size(); ++o) {
        ImageF g_each = g_sampled;
        for (auto& v : g_each.data) v /= static_cast<double>(ev.samples.size());
        bilinear_sample_backward(dehazed[ev.frame], ev.offset_coords[o], ev.valid,
                                 g_each, &grads->dehazed[ev.frame], &g_coords);
      }
    }
    reproject_backward(depth, state.poses[static_cast<size_t>(s)], seq.intrinsics,
                       g_coords, ev.valid, &g_logd, &grads->poses[static_cast<size_t>(s)],
                       tied ? &g_zprime : nullptr);
  }

  // --- chain rule through the dehazed frames ------------------------------
  if (tied) {
    ImageF g_tclamped(1, h, w, 0.0);
    for (int f = 0; f < frame_count; ++f) {
      const ImageF& codes = frozen ? frozen->frame_clamp[f] : cap->frame_clamp[f];
      const ImageF& hazy = seq.frames[f];
      for (int c = 0; c < 3; ++c) {
        const double a = airlight[c];
        for (long i = 0; i < n_pix; ++i) {
          const long idx = static_cast<size_t>(c) * n_pix + i;
          if (codes.data[idx] != 0.0) continue;
          const double tc = t_clamped.data[i];
          g_tclamped.data[i] +=
              g_dehazed_frames[f].data[idx] * (-(hazy.data[idx] - a) / (tc * tc));
        }
      }
    }
    for (long i = 0; i < n_pix; ++i) {
      double g = g_traw.data[i];
      if (t_active.data[i] != 0.0) g += g_tclamped.data[i];
      const double common = g * (-beta_map.data[i] * depth.data[i] * t_raw.data[i]);
      g_logd.data[i] += common;
      g_logb.data[i] += common;
    }
  } else {
    for (int f = 0; f < frame_count; ++f)
      for (long i = 0; i < g_dehazed_frames[f].size(); ++i)
        grads->dehazed[f].data[i] += g_dehazed_frames[f].data[i];
    // t_raw still depends on depth/beta through the reconstruction term.
    for (long i = 0; i < n_pix; ++i) {
      const double common =
          g_traw.data[i] * (-beta_map.data[i] * depth.data[i] * t_raw.data[i]);
      g_logd.data[i] += common;
      g_logb.data[i] += common;
    }
  }

  grads->log_depth = g_logd;
  if (cfg.beta_mode == BetaMode::kScalar) {
    grads->log_beta.data[0] =
        blocked_sum(n_pix, cfg.threads, [&](long i) { return g_logb.data[i]; });
  } else if (field_beta) {
    grads->log_beta = g_logb;
  }
  return terms;
}

}  // namespace hazesfm

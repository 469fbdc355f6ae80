#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hazesfm/optimizer.hpp"
#include "hazesfm/scenegen.hpp"

namespace hazesfm {

// Central-difference verification of every hand-written backward pass.
// Instances are drawn deterministically from the seed and re-drawn until they
// sit clear of the piecewise boundaries (bilinear cell edges, clamp and
// transmission-floor activations, L1 kinks), so the finite-difference oracle
// and the analytic gradient differentiate the same smooth function. The
// objective is checked against its captured activity snapshot, matching how
// the mask and selection are treated as constants during optimization.
struct GradcheckEntry {
  std::string component;
  std::string block;  // parameter block within the component
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool pass = true;
};

namespace gc_detail {

constexpr double kPixelThreshold = 1e-4;
constexpr double kPoseThreshold = 1e-3;
constexpr double kStep = 1e-4;

struct Rng {
  uint64_t s;
  explicit Rng(uint64_t seed) : s(seed) {}
  uint64_t next() {
    uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * ((next() >> 11) * (1.0 / 9007199254740992.0));
  }
};

inline ImageF random_image(Rng& rng, int c, int h, int w, double lo, double hi) {
  ImageF img(c, h, w);
  for (auto& v : img.data) v = rng.uniform(lo, hi);
  return img;
}

// Band-limited random image from seeded lattice noise.
inline ImageF smooth_image(uint64_t seed, uint64_t tag, int c, int h, int w, double lo,
                           double hi) {
  TextureSpec t;
  t.octaves = 3;
  t.base_period = 6.0;
  ImageF img(c, h, w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(ch, y, x) =
            lo + (hi - lo) * noise::value_noise(seed, tag * 131 + ch, x, y, t);
  return img;
}

inline double rel_err(double analytic, double numeric, double floor_abs) {
  const double denom =
      std::max({std::abs(analytic) + std::abs(numeric), floor_abs, 1e-12});
  return std::abs(analytic - numeric) / denom;
}

// Maximum regularized relative error between an analytic gradient block and
// its per-entry finite differences.
template <class Eval>
double block_max_err(const std::vector<double*>& params,
                     const std::vector<double>& analytic, double step, Eval&& eval) {
  double gmax = 0.0;
  for (double a : analytic) gmax = std::max(gmax, std::abs(a));
  const double floor_abs = 1e-4 * gmax + 1e-12;
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + step;
    const double hi = eval();
    *params[i] = saved - step;
    const double lo = eval();
    *params[i] = saved;
    const double fd = (hi - lo) / (2.0 * step);
    worst = std::max(worst, rel_err(analytic[i], fd, floor_abs));
  }
  return worst;
}

// The sampler is piecewise-bilinear with kinks on the pixel grid; the
// supersampled warp shifts them onto eighth-pixel lines, so keep clear of
// every eighth-integer coordinate.
inline bool coords_clear_of_cells(const ImageF& coords, const ImageF& valid,
                                  double margin) {
  for (long i = 0; i < valid.size(); ++i) {
    if (valid.data[i] == 0.0) continue;
    for (int ch = 0; ch < 2; ++ch) {
      const double v = 8.0 * coords.data[static_cast<size_t>(ch) * valid.size() + i];
      if (std::abs(v - std::round(v)) < 8.0 * margin) return false;
    }
  }
  return true;
}

}  // namespace gc_detail

namespace gc_components {

inline GradcheckEntry check_asm(uint64_t seed, int size) {
  gc_detail::Rng rng(seed * 7919 + 1);
  const int n = size;
  ImageF clear = gc_detail::random_image(rng, 3, n, n, 0.1, 0.9);
  ImageF hazy = gc_detail::random_image(rng, 3, n, n, 0.1, 0.9);
  ImageF log_depth = gc_detail::random_image(rng, 1, n, n, std::log(2.0), std::log(20.0));
  ImageF log_beta = gc_detail::random_image(rng, 1, n, n, std::log(0.02), std::log(0.2));
  const std::array<double, 3> airlight{0.85, 0.8, 0.75};
  auto base = reconstruction_partials(hazy, clear, log_depth, log_beta, airlight);

  double gmax = 0.0;
  for (double v : base.d_log_depth.data) gmax = std::max(gmax, std::abs(v));
  const double floor_abs = 1e-4 * gmax + 1e-12;
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        auto fd_of = [&](ImageF& field) {
          const double saved = field.at(0, y, x);
          field.at(0, y, x) = saved + gc_detail::kStep;
          const double hi =
              reconstruction_partials(hazy, clear, log_depth, log_beta, airlight)
                  .reconstructed.at(c, y, x);
          field.at(0, y, x) = saved - gc_detail::kStep;
          const double lo =
              reconstruction_partials(hazy, clear, log_depth, log_beta, airlight)
                  .reconstructed.at(c, y, x);
          field.at(0, y, x) = saved;
          return (hi - lo) / (2.0 * gc_detail::kStep);
        };
        worst = std::max(worst, gc_detail::rel_err(base.d_log_depth.at(c, y, x),
                                                   fd_of(log_depth), floor_abs));
        worst = std::max(worst, gc_detail::rel_err(base.d_log_beta.at(c, y, x),
                                                   fd_of(log_beta), floor_abs));
        // dIhat/dJ = t
        const double saved = clear.at(c, y, x);
        clear.at(c, y, x) = saved + gc_detail::kStep;
        const double hi = reconstruction_partials(hazy, clear, log_depth, log_beta, airlight)
                              .reconstructed.at(c, y, x);
        clear.at(c, y, x) = saved - gc_detail::kStep;
        const double lo = reconstruction_partials(hazy, clear, log_depth, log_beta, airlight)
                              .reconstructed.at(c, y, x);
        clear.at(c, y, x) = saved;
        worst = std::max(worst,
                         gc_detail::rel_err(base.d_clear.at(0, y, x),
                                            (hi - lo) / (2.0 * gc_detail::kStep), floor_abs));
      }
  return {"asm", "partials", worst, gc_detail::kPixelThreshold,
          worst <= gc_detail::kPixelThreshold};
}

struct WarpInstance {
  ImageF source, depth, upstream;
  CameraIntrinsics K;
  PoseSE3 pose;
  WarpResult warp;
};

inline WarpInstance make_warp_instance(uint64_t seed, int size) {
  for (uint64_t attempt = 0;; ++attempt) {
    gc_detail::Rng rng(seed * 6151 + attempt * 97 + 2);
    WarpInstance w;
    w.source = gc_detail::smooth_image(seed + attempt, 3, 1, size, size, 0.1, 0.9);
    w.depth = gc_detail::smooth_image(seed + attempt, 11, 1, size, size, 3.0, 6.0);
    w.K = {0.6 * size, 0.6 * size, (size - 1) / 2.0, (size - 1) / 2.0};
    w.pose.rotation = {rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01),
                       rng.uniform(-0.01, 0.01)};
    w.pose.translation = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                          rng.uniform(-0.05, 0.05)};
    w.upstream = gc_detail::random_image(rng, 1, size, size, -1.0, 1.0);
    w.warp = warp_frame(w.source, w.depth, w.pose, w.K);
    if (gc_detail::coords_clear_of_cells(w.warp.sample_coords, w.warp.valid, 1e-2))
      return w;
    if (attempt > 200) return w;  // give up filtering; vanishingly unlikely
  }
}

inline double warp_probe(const WarpInstance& w, const ImageF& valid) {
  WarpResult res = warp_frame(w.source, w.depth, w.pose, w.K);
  double s = 0.0;
  for (long i = 0; i < valid.size(); ++i)
    if (valid.data[i] != 0.0) s += w.upstream.data[i] * res.warped.data[i];
  return s;
}

inline std::vector<GradcheckEntry> check_warp(uint64_t seed, int size) {
  WarpInstance w = make_warp_instance(seed, size);
  ImageF valid = w.warp.valid;
  ImageF masked_up = w.upstream;
  for (long i = 0; i < valid.size(); ++i)
    if (valid.data[i] == 0.0) masked_up.data[i] = 0.0;
  ImageF g_logd(1, size, size, 0.0), g_src(1, size, size, 0.0);
  std::array<double, 6> g_pose{};
  warp_backward(w.source, w.depth, w.pose, w.K, w.warp, masked_up, &g_logd, &g_pose,
                &g_src);

  std::vector<GradcheckEntry> entries;
  {
    std::vector<double*> params;
    std::vector<double> analytic;
    for (int i = 0; i < 3; ++i) {
      params.push_back(&w.pose.rotation[i]);
      analytic.push_back(g_pose[i]);
    }
    for (int i = 0; i < 3; ++i) {
      params.push_back(&w.pose.translation[i]);
      analytic.push_back(g_pose[3 + i]);
    }
    const double err = gc_detail::block_max_err(params, analytic, gc_detail::kStep,
                                                [&] { return warp_probe(w, valid); });
    entries.push_back({"warp", "pose", err, gc_detail::kPoseThreshold,
                       err <= gc_detail::kPoseThreshold});
  }
  {
    // Log-depth entries, evaluated by writing exp(log d) back into the field.
    double gmax = 0.0;
    for (double v : g_logd.data) gmax = std::max(gmax, std::abs(v));
    const double floor_abs = 1e-4 * gmax + 1e-12;
    double worst = 0.0;
    for (long i = 0; i < w.depth.size(); ++i) {
      double log_d = std::log(w.depth.data[i]);
      const double saved = w.depth.data[i];
      w.depth.data[i] = std::exp(log_d + gc_detail::kStep);
      const double hi = warp_probe(w, valid);
      w.depth.data[i] = std::exp(log_d - gc_detail::kStep);
      const double lo = warp_probe(w, valid);
      w.depth.data[i] = saved;
      worst = std::max(worst, gc_detail::rel_err(g_logd.data[i],
                                                 (hi - lo) / (2.0 * gc_detail::kStep),
                                                 floor_abs));
    }
    entries.push_back({"warp", "log_depth", worst, gc_detail::kPixelThreshold,
                       worst <= gc_detail::kPixelThreshold});
  }
  {
    std::vector<double*> params;
    std::vector<double> analytic;
    for (long i = 0; i < w.source.size(); ++i) {
      params.push_back(&w.source.data[i]);
      analytic.push_back(g_src.data[i]);
    }
    const double err = gc_detail::block_max_err(params, analytic, gc_detail::kStep,
                                                [&] { return warp_probe(w, valid); });
    entries.push_back({"warp", "source", err, gc_detail::kPixelThreshold,
                       err <= gc_detail::kPixelThreshold});
  }
  return entries;
}

inline GradcheckEntry check_ssim(uint64_t seed, int size) {
  gc_detail::Rng rng(seed * 4241 + 3);
  ImageF a = gc_detail::random_image(rng, 3, size, size, 0.1, 0.9);
  ImageF b = gc_detail::random_image(rng, 3, size, size, 0.1, 0.9);
  ImageF upstream = gc_detail::random_image(rng, 1, size, size, -1.0, 1.0);
  ImageF ga(3, size, size, 0.0), gb(3, size, size, 0.0);
  ssim_backward(a, b, upstream, &ga, &gb);
  auto probe = [&] {
    const ImageF s = ssim_map(a, b);
    double v = 0.0;
    for (long i = 0; i < s.size(); ++i) v += upstream.data[i] * s.data[i];
    return v;
  };
  std::vector<double*> params;
  std::vector<double> analytic;
  for (long i = 0; i < a.size(); ++i) {
    params.push_back(&a.data[i]);
    analytic.push_back(ga.data[i]);
  }
  for (long i = 0; i < b.size(); ++i) {
    params.push_back(&b.data[i]);
    analytic.push_back(gb.data[i]);
  }
  const double err = gc_detail::block_max_err(params, analytic, gc_detail::kStep, probe);
  return {"ssim", "inputs", err, gc_detail::kPixelThreshold,
          err <= gc_detail::kPixelThreshold};
}

inline GradcheckEntry check_photometric(uint64_t seed, int size) {
  gc_detail::Rng rng(seed * 911 + 4);
  ImageF pred = gc_detail::random_image(rng, 3, size, size, 0.1, 0.9);
  ImageF target = gc_detail::random_image(rng, 3, size, size, 0.1, 0.9);
  ImageF upstream = gc_detail::random_image(rng, 1, size, size, -1.0, 1.0);
  ImageF gp(3, size, size, 0.0), gt(3, size, size, 0.0);
  photometric_backward(pred, target, 0.85, upstream, &gp, &gt);
  auto probe = [&] {
    const ImageF pe = photometric_error(pred, target, 0.85);
    double v = 0.0;
    for (long i = 0; i < pe.size(); ++i) v += upstream.data[i] * pe.data[i];
    return v;
  };
  std::vector<double*> params;
  std::vector<double> analytic;
  for (long i = 0; i < pred.size(); ++i) {
    params.push_back(&pred.data[i]);
    analytic.push_back(gp.data[i]);
  }
  for (long i = 0; i < target.size(); ++i) {
    params.push_back(&target.data[i]);
    analytic.push_back(gt.data[i]);
  }
  const double err = gc_detail::block_max_err(params, analytic, gc_detail::kStep, probe);
  return {"photometric", "inputs", err, gc_detail::kPixelThreshold,
          err <= gc_detail::kPixelThreshold};
}

inline GradcheckEntry check_smoothness(uint64_t seed, int size) {
  for (uint64_t attempt = 0;; ++attempt) {
    gc_detail::Rng rng(seed * 3371 + attempt * 73 + 5);
    ImageF depth = gc_detail::random_image(rng, 1, size, size, 1.0, 10.0);
    ImageF ref = gc_detail::random_image(rng, 3, size, size, 0.0, 1.0);
    // Keep normalized inverse-depth differences away from the |.| kink.
    const ImageF dstar = mean_normalized_inverse_depth(depth);
    bool ok = true;
    for (int y = 0; y < size && ok; ++y)
      for (int x = 0; x < size && ok; ++x) {
        if (x + 1 < size && std::abs(dstar.at(0, y, x + 1) - dstar.at(0, y, x)) < 1e-3)
          ok = false;
        if (y + 1 < size && std::abs(dstar.at(0, y + 1, x) - dstar.at(0, y, x)) < 1e-3)
          ok = false;
      }
    if (!ok && attempt < 200) continue;

    ImageF g(1, size, size, 0.0);
    smoothness_loss(depth, ref, &g);
    double gmax = 0.0;
    for (double v : g.data) gmax = std::max(gmax, std::abs(v));
    const double floor_abs = 1e-4 * gmax + 1e-12;
    double worst = 0.0;
    for (long i = 0; i < depth.size(); ++i) {
      const double log_d = std::log(depth.data[i]);
      const double saved = depth.data[i];
      depth.data[i] = std::exp(log_d + gc_detail::kStep);
      const double hi = smoothness_loss(depth, ref);
      depth.data[i] = std::exp(log_d - gc_detail::kStep);
      const double lo = smoothness_loss(depth, ref);
      depth.data[i] = saved;
      worst = std::max(worst, gc_detail::rel_err(g.data[i],
                                                 (hi - lo) / (2.0 * gc_detail::kStep),
                                                 floor_abs));
    }
    return {"smoothness", "log_depth", worst, gc_detail::kPixelThreshold,
            worst <= gc_detail::kPixelThreshold};
  }
}

struct ObjectiveInstance {
  FrameSequence seq;
  OptimState state;
  OptimConfig cfg;
  std::array<double, 3> airlight;
  ImageF reference;
  FrozenActivity frozen;
  ObjectiveGradients grads;
};

inline bool objective_instance_generic(const ObjectiveInstance& inst) {
  const int h = inst.seq.frames.front().height;
  const int w = inst.seq.frames.front().width;
  const long n_pix = static_cast<long>(h) * w;
  // Transmission floor margins.
  ImageF depth = inst.state.log_depth;
  for (auto& v : depth.data) v = std::exp(v);
  const double beta = std::exp(inst.state.log_beta.data[0]);
  for (long i = 0; i < n_pix; ++i) {
    const double t = std::exp(-beta * depth.data[i]);
    if (std::abs(t - inst.cfg.t_min) < 1e-3) return false;
  }
  // Clamp margins on the dehazed target and selected-pixel L1 margins need a
  // forward pass; reuse the captured activity.
  for (int s = 0; s < static_cast<int>(inst.state.poses.size()); ++s) {
    const auto rp = reproject(depth, inst.state.poses[static_cast<size_t>(s)],
                              inst.seq.intrinsics);
    if (!gc_detail::coords_clear_of_cells(rp.coords, inst.frozen.warp_valid[s], 1e-2))
      return false;
  }
  return true;
}

inline ObjectiveInstance make_objective_instance(uint64_t seed, int size) {
  for (uint64_t attempt = 0;; ++attempt) {
    gc_detail::Rng rng(seed * 15013 + attempt * 389 + 6);
    ObjectiveInstance inst;
    inst.cfg.mode = DehazeMode::kTied;
    inst.cfg.beta_mode = BetaMode::kScalar;
    inst.cfg.threads = 1;
    inst.seq.window = 1;
    inst.seq.intrinsics = {0.7 * size, 0.7 * size, (size - 1) / 2.0, (size - 1) / 2.0};
    for (int f = 0; f < 3; ++f)
      inst.seq.frames.push_back(
          gc_detail::smooth_image(seed + attempt, 50 + f, 3, size, size, 0.15, 0.85));
    inst.airlight = {0.82, 0.8, 0.78};
    inst.reference = gc_detail::smooth_image(seed + attempt, 60, 3, size, size, 0.2, 0.8);

    inst.state.log_depth = gc_detail::smooth_image(seed + attempt, 70, 1, size, size,
                                                   std::log(2.5), std::log(7.0));
    inst.state.log_beta = ImageF(1, 1, 1, std::log(rng.uniform(0.015, 0.03)));
    inst.state.poses.resize(2);
    for (auto& p : inst.state.poses) {
      p.rotation = {rng.uniform(-0.008, 0.008), rng.uniform(-0.008, 0.008),
                    rng.uniform(-0.008, 0.008)};
      p.translation = {rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04),
                       rng.uniform(-0.04, 0.04)};
    }

    ObjectiveInputs inputs;
    inputs.reference = &inst.reference;
    try {
      objective(inst.state, inst.seq, inst.airlight, inst.cfg, inputs, &inst.grads,
                nullptr, &inst.frozen);
    } catch (const std::exception&) {
      continue;
    }
    if (objective_instance_generic(inst) || attempt > 200) return inst;
  }
}

inline std::vector<GradcheckEntry> check_objective(uint64_t seed, int size) {
  ObjectiveInstance inst = make_objective_instance(seed, size);
  ObjectiveInputs inputs;
  inputs.reference = &inst.reference;
  auto frozen_eval = [&] {
    return objective(inst.state, inst.seq, inst.airlight, inst.cfg, inputs, nullptr,
                     &inst.frozen, nullptr)
        .total;
  };

  std::vector<GradcheckEntry> entries;
  {
    std::vector<double*> params;
    std::vector<double> analytic;
    for (long i = 0; i < inst.state.log_depth.size(); ++i) {
      params.push_back(&inst.state.log_depth.data[i]);
      analytic.push_back(inst.grads.log_depth.data[i]);
    }
    const double err =
        gc_detail::block_max_err(params, analytic, gc_detail::kStep, frozen_eval);
    entries.push_back({"objective", "log_depth", err, gc_detail::kPixelThreshold,
                       err <= gc_detail::kPixelThreshold});
  }
  {
    std::vector<double*> params{&inst.state.log_beta.data[0]};
    std::vector<double> analytic{inst.grads.log_beta.data[0]};
    const double err =
        gc_detail::block_max_err(params, analytic, gc_detail::kStep, frozen_eval);
    entries.push_back({"objective", "log_beta", err, gc_detail::kPixelThreshold,
                       err <= gc_detail::kPixelThreshold});
  }
  {
    std::vector<double*> params;
    std::vector<double> analytic;
    for (size_t s = 0; s < inst.state.poses.size(); ++s)
      for (int i = 0; i < 3; ++i) {
        params.push_back(&inst.state.poses[s].rotation[i]);
        analytic.push_back(inst.grads.poses[s][i]);
        params.push_back(&inst.state.poses[s].translation[i]);
        analytic.push_back(inst.grads.poses[s][3 + i]);
      }
    const double err =
        gc_detail::block_max_err(params, analytic, gc_detail::kStep, frozen_eval);
    entries.push_back({"objective", "poses", err, gc_detail::kPoseThreshold,
                       err <= gc_detail::kPoseThreshold});
  }
  return entries;
}

}  // namespace gc_components

// Runs the selected component checks. `corrupt` is a test hook: naming a
// component biases its reported analytic gradient so the checker must flag it.
inline GradcheckReport gradcheck(const std::string& component, uint64_t seed,
                                 int size = 8, const std::string& corrupt = "") {
  GradcheckReport report;
  auto want = [&](const char* name) { return component == "all" || component == name; };
  if (want("asm")) report.entries.push_back(gc_components::check_asm(seed, size));
  if (want("warp"))
    for (auto& e : gc_components::check_warp(seed, size)) report.entries.push_back(e);
  if (want("ssim")) report.entries.push_back(gc_components::check_ssim(seed, size));
  if (want("photometric"))
    report.entries.push_back(gc_components::check_photometric(seed, size));
  if (want("smoothness"))
    report.entries.push_back(gc_components::check_smoothness(seed, size));
  if (want("objective"))
    for (auto& e : gc_components::check_objective(seed, size)) report.entries.push_back(e);
  if (report.entries.empty())
    throw std::invalid_argument("gradcheck: unknown component '" + component + "'");
  for (auto& e : report.entries) {
    if (!corrupt.empty() && e.component == corrupt) {
      e.max_rel_err = std::max(e.max_rel_err, 1.0);  // deliberately spoiled
      e.pass = false;
    }
    report.pass = report.pass && e.pass;
  }
  return report;
}

}  // namespace hazesfm

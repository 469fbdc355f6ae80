#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hazesfm/optimizer.hpp"

namespace hazesfm {

struct TraceRow {
  int level = 0;
  long iteration = 0;
  ObjectiveTerms terms;
};

struct SolveStatus {
  bool converged = false;
  bool diverged = false;
  bool nonfinite = false;
  std::string message;
};

struct SolveResult {
  OptimState state;
  std::vector<TraceRow> trace;
  std::array<double, 3> airlight{};
  ImageF depth;                 // exp(log_depth), full resolution
  ImageF beta;                  // 1xhxw field or 1x1x1 scalar
  std::vector<ImageF> dehazed;  // one per frame
  SolveStatus status;
};

// Caller-supplied starting point; anything left null falls back to the
// configured defaults (flat depth at the geometric mean of the bounds,
// init_beta, identity poses, dark-channel airlight).
struct InitOverrides {
  const ImageF* depth = nullptr;
  const ImageF* beta_field = nullptr;
  std::optional<double> beta_scalar;
  const std::vector<PoseSE3>* poses = nullptr;
  std::optional<std::array<double, 3>> airlight;
};

namespace opt_detail {

// Bias-corrected adaptive first-order update with box projection.
inline void adam_step_block(AdamMoments& mom, double* params, const double* grad,
                            size_t n, double lr, const OptimConfig& cfg, long t,
                            double lo, double hi) {
  if (mom.m.size() != n) mom.reset(n);
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (size_t i = 0; i < n; ++i) {
    mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * grad[i];
    mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mh = mom.m[i] / corr1;
    const double vh = mom.v[i] / corr2;
    params[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
    params[i] = std::clamp(params[i], lo, hi);
  }
}

}  // namespace opt_detail

// One optimizer step over every parameter block. Deterministic given
// (state, gradients, config); log-depth and log-beta are projected onto their
// configured boxes, free dehazed frames onto [0,1].
inline void step(OptimState& state, const ObjectiveGradients& grads,
                 const OptimConfig& cfg) {
  state.iteration += 1;
  const long t = state.iteration;
  opt_detail::adam_step_block(state.mom_depth, state.log_depth.data.data(),
                              grads.log_depth.data.data(), state.log_depth.data.size(),
                              cfg.lr_log_depth, cfg, t, std::log(cfg.depth_min),
                              std::log(cfg.depth_max));
  if (cfg.beta_mode != BetaMode::kFixed && !state.log_beta.empty())
    opt_detail::adam_step_block(state.mom_beta, state.log_beta.data.data(),
                                grads.log_beta.data.data(), state.log_beta.data.size(),
                                cfg.lr_log_beta, cfg, t, std::log(cfg.beta_min),
                                std::log(cfg.beta_max));
  if (!state.poses.empty()) {
    std::vector<double> flat(state.poses.size() * 6);
    std::vector<double> gflat(state.poses.size() * 6);
    for (size_t s = 0; s < state.poses.size(); ++s) {
      for (int i = 0; i < 3; ++i) {
        flat[s * 6 + i] = state.poses[s].rotation[i];
        flat[s * 6 + 3 + i] = state.poses[s].translation[i];
        gflat[s * 6 + i] = grads.poses[s][i];
        gflat[s * 6 + 3 + i] = grads.poses[s][3 + i];
      }
    }
    opt_detail::adam_step_block(state.mom_pose, flat.data(), gflat.data(), flat.size(),
                                cfg.lr_pose, cfg, t,
                                -std::numeric_limits<double>::infinity(),
                                std::numeric_limits<double>::infinity());
    for (size_t s = 0; s < state.poses.size(); ++s)
      for (int i = 0; i < 3; ++i) {
        state.poses[s].rotation[i] = flat[s * 6 + i];
        state.poses[s].translation[i] = flat[s * 6 + 3 + i];
      }
  }
  if (cfg.mode == DehazeMode::kFree) {
    if (state.mom_dehazed.m.empty() && !state.dehazed.empty()) {
      size_t total = 0;
      for (const auto& img : state.dehazed) total += img.data.size();
      state.mom_dehazed.reset(total);
    }
    size_t off = 0;
    for (size_t f = 0; f < state.dehazed.size(); ++f) {
      auto& img = state.dehazed[f];
      AdamMoments view;  // operate on a window of the shared moment buffers
      view.m.assign(state.mom_dehazed.m.begin() + off,
                    state.mom_dehazed.m.begin() + off + img.data.size());
      view.v.assign(state.mom_dehazed.v.begin() + off,
                    state.mom_dehazed.v.begin() + off + img.data.size());
      opt_detail::adam_step_block(view, img.data.data(), grads.dehazed[f].data.data(),
                                  img.data.size(), cfg.lr_dehazed, cfg, t, 0.0, 1.0);
      std::copy(view.m.begin(), view.m.end(), state.mom_dehazed.m.begin() + off);
      std::copy(view.v.begin(), view.v.end(), state.mom_dehazed.v.begin() + off);
      off += img.data.size();
    }
  }
}

namespace opt_detail {

inline ImageF log_of(const ImageF& img) {
  ImageF out = img;
  for (auto& v : out.data) {
    if (v <= 0.0) throw std::invalid_argument("init field must be strictly positive");
    v = std::log(v);
  }
  return out;
}

inline int realized_levels(int h, int w, int requested) {
  int levels = 1;
  while (levels < requested && std::min(h >> levels, w >> levels) >= 12) ++levels;
  return levels;
}

}  // namespace opt_detail

// Joint coarse-to-fine minimization. Starts at the coarsest pyramid level,
// promotes the fields bilinearly between levels, and records one trace row
// per iteration. Divergence (the objective rising for `divergence_window`
// consecutive iterations) and non-finite objectives abort with the partial
// trace preserved.
inline SolveResult solve(const FrameSequence& seq, const OptimConfig& cfg,
                         const InitOverrides& init = {},
                         const ObjectiveInputs& inputs = {}) {
  seq.validate();
  cfg.validate();
  SolveResult res;
  const int h = seq.frames.front().height;
  const int w = seq.frames.front().width;
  const int target = seq.target_index();

  res.airlight = init.airlight ? *init.airlight
                               : estimate_airlight(seq.frames[static_cast<size_t>(target)]);

  // Full-resolution initial fields.
  ImageF log_depth0(1, h, w, 0.0);
  if (init.depth) {
    if (init.depth->height != h || init.depth->width != w)
      throw std::invalid_argument("solve: init depth shape mismatch");
    log_depth0 = opt_detail::log_of(*init.depth);
  } else {
    const double d0 = cfg.init_depth > 0.0 ? cfg.init_depth
                                           : std::sqrt(cfg.depth_min * cfg.depth_max);
    log_depth0.fill(std::log(d0));
  }
  for (auto& v : log_depth0.data)
    v = std::clamp(v, std::log(cfg.depth_min), std::log(cfg.depth_max));

  ImageF log_beta0;
  double fixed_beta = cfg.fixed_beta;
  if (cfg.beta_mode == BetaMode::kField) {
    if (init.beta_field) {
      if (init.beta_field->height != h || init.beta_field->width != w)
        throw std::invalid_argument("solve: init beta field shape mismatch");
      log_beta0 = opt_detail::log_of(*init.beta_field);
    } else {
      log_beta0 = ImageF(1, h, w, std::log(init.beta_scalar.value_or(cfg.init_beta)));
    }
    for (auto& v : log_beta0.data)
      v = std::clamp(v, std::log(cfg.beta_min), std::log(cfg.beta_max));
  } else if (cfg.beta_mode == BetaMode::kScalar) {
    double b0 = init.beta_scalar.value_or(cfg.init_beta);
    if (init.beta_field) b0 = init.beta_field->mean();
    b0 = std::clamp(b0, cfg.beta_min, cfg.beta_max);
    log_beta0 = ImageF(1, 1, 1, std::log(b0));
  } else if (init.beta_scalar) {
    fixed_beta = *init.beta_scalar;
  }

  std::vector<PoseSE3> poses0(static_cast<size_t>(seq.frames.size() - 1));
  if (init.poses) {
    if (init.poses->size() != poses0.size())
      throw std::invalid_argument("solve: init pose count mismatch");
    poses0 = *init.poses;
  }

  // Frame pyramids, index 0 = full resolution.
  const int levels = opt_detail::realized_levels(h, w, cfg.pyramid_levels);
  std::vector<FrameSequence> pyramid(static_cast<size_t>(levels));
  std::vector<ImageF> reference_pyramid(static_cast<size_t>(levels));
  pyramid[0] = seq;
  if (inputs.reference) reference_pyramid[0] = *inputs.reference;
  for (int l = 1; l < levels; ++l) {
    FrameSequence& cur = pyramid[static_cast<size_t>(l)];
    const FrameSequence& prev = pyramid[static_cast<size_t>(l - 1)];
    cur.window = seq.window;
    cur.intrinsics = prev.intrinsics.halved();
    for (const auto& f : prev.frames) cur.frames.push_back(downsample2(f));
    if (inputs.reference)
      reference_pyramid[static_cast<size_t>(l)] =
          downsample2(reference_pyramid[static_cast<size_t>(l - 1)]);
  }

  // State at the coarsest level.
  OptimState state;
  state.fixed_beta = fixed_beta;
  state.poses = poses0;
  state.log_depth = log_depth0;
  state.log_beta = log_beta0;
  for (int l = 1; l < levels; ++l) {
    state.log_depth = downsample2(state.log_depth);
    if (cfg.beta_mode == BetaMode::kField) state.log_beta = downsample2(state.log_beta);
  }

  for (int l = levels - 1; l >= 0; --l) {
    const FrameSequence& lseq = pyramid[static_cast<size_t>(l)];
    if (cfg.mode == DehazeMode::kFree) {
      // (Re)initialize free dehazed frames from the current closed form.
      state.dehazed.clear();
      HazeParams p;
      p.airlight = res.airlight;
      ImageF d = state.log_depth;
      for (auto& v : d.data) v = std::exp(v);
      if (cfg.beta_mode == BetaMode::kField) {
        p.beta = state.log_beta;
        for (auto& v : p.beta.data) v = std::exp(v);
      } else {
        const double b = cfg.beta_mode == BetaMode::kScalar
                             ? std::exp(state.log_beta.data[0])
                             : state.fixed_beta;
        p.beta = ImageF(1, 1, 1, b);
      }
      for (const auto& f : lseq.frames)
        state.dehazed.push_back(dehaze_closed_form(f, d, p, cfg.t_min));
      state.mom_dehazed = AdamMoments{};
    }
    state.mom_depth = AdamMoments{};
    state.mom_beta = AdamMoments{};
    state.mom_pose = AdamMoments{};
    state.iteration = 0;

    ObjectiveInputs level_inputs = inputs;
    if (inputs.reference) level_inputs.reference = &reference_pyramid[static_cast<size_t>(l)];

    std::vector<double> history;
    int rising = 0;
    bool level_converged = false;
    for (int it = 0; it < cfg.max_iterations; ++it) {
      ObjectiveGradients grads;
      ObjectiveTerms terms;
      try {
        terms = objective(state, lseq, res.airlight, cfg, level_inputs, &grads);
      } catch (const std::runtime_error& e) {
        res.status.nonfinite = true;
        res.status.message = e.what();
        return res;
      }
      res.trace.push_back({l, state.iteration, terms});
      if (!history.empty() && terms.total > history.back()) {
        if (++rising >= cfg.divergence_window) {
          res.status.diverged = true;
          res.status.message = "objective rose for " +
                               std::to_string(cfg.divergence_window) +
                               " consecutive iterations";
          return res;
        }
      } else {
        rising = 0;
      }
      history.push_back(terms.total);
      const int win = cfg.tolerance_window;
      if (static_cast<int>(history.size()) > win) {
        const double before = history[history.size() - 1 - win];
        const double drop = (before - terms.total) / std::max(std::abs(before), 1e-12);
        if (drop < cfg.tolerance) {
          level_converged = true;
          break;
        }
      }
      step(state, grads, cfg);
    }
    res.status.converged = level_converged;

    if (l > 0) {
      const FrameSequence& fseq = pyramid[static_cast<size_t>(l - 1)];
      const int fh = fseq.frames.front().height, fw = fseq.frames.front().width;
      state.log_depth = upsample2_bilinear(state.log_depth, fh, fw);
      if (cfg.beta_mode == BetaMode::kField)
        state.log_beta = upsample2_bilinear(state.log_beta, fh, fw);
    }
  }

  // Final fields and dehazed frames at full resolution.
  res.depth = state.log_depth;
  for (auto& v : res.depth.data) v = std::exp(v);
  if (cfg.beta_mode == BetaMode::kField) {
    res.beta = state.log_beta;
    for (auto& v : res.beta.data) v = std::exp(v);
  } else if (cfg.beta_mode == BetaMode::kScalar) {
    res.beta = ImageF(1, 1, 1, std::exp(state.log_beta.data[0]));
  } else {
    res.beta = ImageF(1, 1, 1, state.fixed_beta);
  }
  if (cfg.mode == DehazeMode::kFree) {
    res.dehazed = state.dehazed;
  } else {
    HazeParams p;
    p.beta = res.beta;
    p.airlight = res.airlight;
    for (const auto& f : seq.frames)
      res.dehazed.push_back(dehaze_closed_form(f, res.depth, p, cfg.t_min));
  }
  res.state = std::move(state);
  return res;
}

}  // namespace hazesfm

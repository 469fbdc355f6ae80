#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hazesfm/gradcheck.hpp"
#include "hazesfm/scenegen.hpp"
#include "hazesfm/solver.hpp"
#include "testutil.hpp"

using namespace hazesfm;

TEST_CASE("gradcheck passes every component on seed 0", "[optimizer]") {
  GradcheckReport rep = gradcheck("all", 0, 8);
  for (const auto& e : rep.entries) {
    INFO(e.component << "/" << e.block << " err=" << e.max_rel_err
                     << " thr=" << e.threshold);
    CHECK(e.pass);
  }
  CHECK(rep.pass);
}

TEST_CASE("gradcheck flags a deliberately corrupted gradient", "[optimizer]") {
  GradcheckReport rep = gradcheck("all", 0, 8, "smoothness");
  bool found = false;
  for (const auto& e : rep.entries)
    if (e.component == "smoothness") {
      found = true;
      CHECK_FALSE(e.pass);
    }
  CHECK(found);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("gradcheck reports are deterministic", "[optimizer]") {
  GradcheckReport a = gradcheck("ssim", 3, 8);
  GradcheckReport b = gradcheck("ssim", 3, 8);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i)
    CHECK(a.entries[i].max_rel_err == b.entries[i].max_rel_err);
}

namespace {

FrameSequence tiny_sequence(uint64_t seed, int size = 16) {
  FrameSequence seq;
  seq.window = 1;
  seq.intrinsics = {0.7 * size, 0.7 * size, (size - 1) / 2.0, (size - 1) / 2.0};
  for (int f = 0; f < 3; ++f)
    seq.frames.push_back(
        gc_detail::smooth_image(seed, 50 + f, 3, size, size, 0.2, 0.8));
  return seq;
}

OptimState tiny_state(const FrameSequence& seq) {
  OptimState st;
  const int h = seq.frames.front().height, w = seq.frames.front().width;
  st.log_depth = ImageF(1, h, w, std::log(5.0));
  st.log_beta = ImageF(1, 1, 1, std::log(0.03));
  st.poses.resize(2);
  st.poses[0].translation = {0.03, 0.0, 0.01};
  st.poses[1].translation = {-0.03, 0.0, -0.01};
  return st;
}

}  // namespace

TEST_CASE("objective is zero with all weights zero", "[optimizer]") {
  FrameSequence seq = tiny_sequence(21);
  OptimState st = tiny_state(seq);
  OptimConfig cfg;
  cfg.weights.eta = cfg.weights.gamma = cfg.weights.xi = 0.0;
  cfg.weights.omega1 = cfg.weights.omega2 = 0.0;
  cfg.pe_weight = 0.0;
  ObjectiveGradients grads;
  ObjectiveTerms terms = objective(st, seq, {0.8, 0.8, 0.8}, cfg, {}, &grads);
  CHECK(terms.total == 0.0);
  for (double v : grads.log_depth.data) CHECK(v == 0.0);
  CHECK(grads.log_beta.data[0] == 0.0);
  for (const auto& p : grads.poses)
    for (double v : p) CHECK(v == 0.0);
}

TEST_CASE("free-dehaze objective gradients match finite differences", "[optimizer]") {
  FrameSequence seq = tiny_sequence(33, 10);
  OptimState st = tiny_state(seq);
  OptimConfig cfg;
  cfg.mode = DehazeMode::kFree;
  const int h = 10, w = 10;
  for (int f = 0; f < 3; ++f)
    st.dehazed.push_back(gc_detail::smooth_image(40 + f, 9, 3, h, w, 0.25, 0.75));

  FrozenActivity frozen;
  ObjectiveGradients grads;
  objective(st, seq, {0.8, 0.8, 0.8}, cfg, {}, &grads, nullptr, &frozen);
  auto eval = [&] {
    return objective(st, seq, {0.8, 0.8, 0.8}, cfg, {}, nullptr, &frozen).total;
  };

  testutil::Rng rng(5);
  for (int rep = 0; rep < 40; ++rep) {
    const int f = rng.uniform_int(0, 2);
    const long i = rng.uniform_int(0, static_cast<int>(st.dehazed[f].size() - 1));
    const double fd = testutil::central_difference(eval, st.dehazed[f].data[i], 1e-5);
    CHECK(testutil::rel_err(grads.dehazed[f].data[i], fd, 1e-7) < 1e-3);
  }
  for (int rep = 0; rep < 20; ++rep) {
    const long i = rng.uniform_int(0, static_cast<int>(st.log_depth.size() - 1));
    const double fd = testutil::central_difference(eval, st.log_depth.data[i], 1e-5);
    CHECK(testutil::rel_err(grads.log_depth.data[i], fd, 1e-7) < 1e-3);
  }
  {
    const double fd = testutil::central_difference(eval, st.log_beta.data[0], 1e-5);
    CHECK(testutil::rel_err(grads.log_beta.data[0], fd, 1e-7) < 1e-3);
  }
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 3; ++i) {
      const double fd =
          testutil::central_difference(eval, st.poses[s].translation[i], 1e-6);
      CHECK(testutil::rel_err(grads.poses[s][3 + i], fd, 1e-6) < 1e-3);
    }
}

TEST_CASE("adam step: zero gradients leave parameters unchanged", "[optimizer]") {
  FrameSequence seq = tiny_sequence(44);
  OptimState st = tiny_state(seq);
  OptimConfig cfg;
  ObjectiveGradients grads;
  grads.log_depth = ImageF(1, 16, 16, 0.0);
  grads.log_beta = ImageF(1, 1, 1, 0.0);
  grads.poses.assign(2, {});
  OptimState before = st;
  step(st, grads, cfg);
  CHECK(st.iteration == 1);
  CHECK(st.log_depth.data == before.log_depth.data);
  CHECK(st.log_beta.data == before.log_beta.data);
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 3; ++i) {
      CHECK(st.poses[s].rotation[i] == before.poses[s].rotation[i]);
      CHECK(st.poses[s].translation[i] == before.poses[s].translation[i]);
    }
}

TEST_CASE("adam step matches the hand-unrolled recursion for k = 3", "[optimizer]") {
  OptimConfig cfg;
  cfg.lr_log_depth = 0.01;
  OptimState st;
  st.log_depth = ImageF(1, 1, 1, 0.0);
  st.log_beta = ImageF();
  ObjectiveGradients grads;
  grads.log_depth = ImageF(1, 1, 1, 0.7);  // constant gradient g
  const double g = 0.7, b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  double m = 0.0, v = 0.0, x = 0.0;
  for (int k = 1; k <= 3; ++k) {
    step(st, grads, cfg);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, k));
    const double vh = v / (1 - std::pow(b2, k));
    x -= cfg.lr_log_depth * mh / (std::sqrt(vh) + cfg.adam_eps);
    CHECK(st.log_depth.data[0] == Catch::Approx(x).margin(1e-15));
  }
}

TEST_CASE("adam step projects depth onto its box", "[optimizer]") {
  OptimConfig cfg;
  cfg.lr_log_depth = 10.0;  // huge step
  OptimState st;
  st.log_depth = ImageF(1, 1, 1, std::log(50.0));
  ObjectiveGradients grads;
  grads.log_depth = ImageF(1, 1, 1, -1.0);  // pushes depth up
  step(st, grads, cfg);
  CHECK(st.log_depth.data[0] == Catch::Approx(std::log(cfg.depth_max)));
}

TEST_CASE("static sequences suppress the photometric mask", "[optimizer]") {
  // Identical frames and identity poses: warping cannot beat the unwarped
  // source anywhere, so the mask density is zero and smoothness dominates.
  FrameSequence seq = tiny_sequence(55);
  seq.frames[0] = seq.frames[1];
  seq.frames[2] = seq.frames[1];
  OptimState st = tiny_state(seq);
  st.poses.assign(2, PoseSE3{});
  OptimConfig cfg;
  ObjectiveGradients grads;
  ObjectiveTerms terms = objective(st, seq, {0.8, 0.8, 0.8}, cfg, {}, &grads);
  CHECK(terms.mask_density == 0.0);
  CHECK(terms.photometric == 0.0);
}

TEST_CASE("ground-truth state scores a near-zero objective", "[optimizer]") {
  // A fronto-parallel plane at depth 4 with focal length 64 and a 0.125 m
  // baseline gives an exactly 2-pixel integer disparity, so the ground-truth
  // warp is sampling-exact and the data terms vanish at the optimum.
  SceneSpec spec;
  spec.seed = 17;
  spec.height = 64;
  spec.width = 64;
  spec.intrinsics = {64, 64, 31.5, 31.5};
  spec.plane_depth_top = 4.0;
  spec.plane_depth_bottom = 4.0;
  spec.texture.base_period = 24.0;
  spec.texture.octaves = 3;
  spec.texture.contrast = 0.5;
  spec.beta.uniform = true;
  spec.beta.value = 0.04;
  PoseSE3 l, r;
  l.translation = {0.125, 0.0, 0.0};
  r.translation = {-0.125, 0.0, 0.0};
  spec.trajectory = {l, PoseSE3{}, r};
  SceneBundle b = generate(spec);

  FrameSequence seq;
  seq.window = 1;
  seq.frames = b.hazy;
  seq.intrinsics = b.intrinsics;

  OptimConfig cfg;
  OptimState gt;
  gt.log_depth = b.depth[1];
  for (auto& v : gt.log_depth.data) v = std::log(v);
  gt.log_beta = ImageF(1, 1, 1, std::log(spec.beta.value));
  gt.poses = {b.poses[0], b.poses[2]};

  ObjectiveGradients g_gt;
  ObjectiveTerms at_gt = objective(gt, seq, b.airlight, cfg, {}, &g_gt);
  CHECK(at_gt.total <= 1e-4);

  OptimState noisy = gt;
  testutil::Rng rng(9);
  for (auto& v : noisy.log_depth.data) v += std::log(1.0 + rng.uniform(-0.1, 0.1));
  ObjectiveGradients g_pert;
  objective(noisy, seq, b.airlight, cfg, {}, &g_pert);
  double inf_gt = 0.0, inf_pert = 0.0;
  for (double v : g_gt.log_depth.data) inf_gt = std::max(inf_gt, std::abs(v));
  for (double v : g_pert.log_depth.data) inf_pert = std::max(inf_pert, std::abs(v));
  CHECK(inf_gt <= 1e-3 * inf_pert);
}

TEST_CASE("clear-scene solve decreases the objective to convergence", "[optimizer]") {
  SceneSpec spec;
  spec.seed = 23;
  spec.height = 32;
  spec.width = 32;
  spec.intrinsics = {40, 40, 15.5, 15.5};
  spec.plane_depth_top = 12.0;
  spec.plane_depth_bottom = 4.0;
  spec.texture.base_period = 12.0;
  spec.beta.uniform = true;
  spec.beta.value = 0.0;  // clear scene
  PoseSE3 l, r;
  l.translation = {0.3, 0.0, 0.0};  // about 3 px of disparity at 4 m
  r.translation = {-0.3, 0.0, 0.0};
  spec.trajectory = {l, PoseSE3{}, r};
  SceneBundle b = generate(spec);

  FrameSequence seq;
  seq.window = 1;
  seq.frames = b.hazy;
  seq.intrinsics = b.intrinsics;

  OptimConfig cfg;
  cfg.beta_mode = BetaMode::kFixed;
  cfg.fixed_beta = 0.0;
  cfg.pyramid_levels = 2;
  cfg.max_iterations = 120;
  InitOverrides init;
  ImageF d0 = b.depth[1];
  testutil::Rng rng(2);
  for (auto& v : d0.data) v *= 1.0 + rng.uniform(-0.08, 0.08);
  init.depth = &d0;
  std::vector<PoseSE3> poses{b.poses[0], b.poses[2]};
  init.poses = &poses;
  init.airlight = b.airlight;
  SolveResult res = solve(seq, cfg, init);
  REQUIRE_FALSE(res.status.diverged);
  REQUIRE_FALSE(res.status.nonfinite);
  REQUIRE(res.trace.size() > 2);
  CHECK(res.trace.back().terms.total < res.trace.front().terms.total);
  CHECK(res.status.converged);
}

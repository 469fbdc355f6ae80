// hazesfm: synthesize hazy test scenes, jointly estimate depth / scattering /
// pose from short hazy sequences, dehaze, and evaluate the results.
//
// Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hazesfm/gradcheck.hpp"
#include "hazesfm/image_io.hpp"
#include "hazesfm/metrics.hpp"
#include "hazesfm/scenegen.hpp"
#include "hazesfm/serde.hpp"
#include "hazesfm/solver.hpp"
#include "hazesfm/wavelet.hpp"

namespace fs = std::filesystem;
using namespace hazesfm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInvalidInput = 2;
constexpr int kExitNumerical = 3;

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

int run_synth(const std::string& scene_path, const std::string& out_dir) {
  Stopwatch watch;
  SceneSpec spec = scene_spec_from_json(read_json_file(scene_path));
  SceneBundle bundle;
  try {
    bundle = generate(spec);
  } catch (const std::invalid_argument& e) {
    std::cerr << "synth: scene rejected: " << e.what() << "\n";
    return kExitInvalidInput;
  }
  fs::create_directories(out_dir);
  write_bundle(bundle, out_dir);
  const ConsistencyReport rep = self_consistency_report(bundle);
  RunManifest m;
  m.subcommand = "synth";
  m.config = to_json(spec);
  m.inputs = {{"scene", scene_path}};
  m.outputs = {{"dir", out_dir},
               {"frames", static_cast<int>(bundle.clear.size())},
               {"warp_consistency_mean_abs", rep.worst}};
  m.seed = spec.seed;
  m.duration_seconds = watch.seconds();
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  std::cout << "synth: wrote " << bundle.clear.size() << " frames to " << out_dir
            << " (warp consistency " << rep.worst << ")\n";
  return kExitOk;
}

int run_optimize(const std::string& frames_dir, const std::string& config_path,
                 const std::string& out_dir, const std::string& ref_path,
                 const std::string& airlight_path, const std::string& init_depth_path,
                 const std::string& init_beta_path, const std::string& init_poses_path,
                 bool deterministic_flag, int threads_flag, int iterations_flag,
                 const std::string& mode_flag, const std::string& beta_mode_flag) {
  Stopwatch watch;
  OptimConfig cfg;
  if (!config_path.empty()) cfg = config_from_json(read_json_file(config_path));
  if (deterministic_flag) cfg.deterministic = true;
  if (threads_flag > 0)
    cfg.threads = threads_flag;
  else if (cfg.threads <= 0)
    cfg.threads = env_thread_default();
  if (iterations_flag > 0) cfg.max_iterations = iterations_flag;
  if (!mode_flag.empty())
    cfg.mode = mode_flag == "free" ? DehazeMode::kFree : DehazeMode::kTied;
  if (!beta_mode_flag.empty()) {
    if (beta_mode_flag == "scalar") cfg.beta_mode = BetaMode::kScalar;
    else if (beta_mode_flag == "field") cfg.beta_mode = BetaMode::kField;
    else if (beta_mode_flag == "fixed") cfg.beta_mode = BetaMode::kFixed;
    else {
      std::cerr << "optimize: unknown beta mode '" << beta_mode_flag << "'\n";
      return kExitUsage;
    }
  }

  FrameDir frames = read_frame_dir(frames_dir);
  if (frames.frames.size() < 2) {
    std::cerr << "optimize: needs at least 2 frames\n";
    return kExitInvalidInput;
  }
  if (frames.frames.size() % 2 == 0) {
    std::cerr << "optimize: needs an odd frame count (middle frame is the target)\n";
    return kExitInvalidInput;
  }
  FrameSequence seq;
  seq.frames = frames.frames;
  seq.window = static_cast<int>(frames.frames.size()) / 2;
  seq.intrinsics = frames.intrinsics;

  InitOverrides init;
  ImageF init_depth, init_beta;
  std::vector<PoseSE3> init_poses;
  std::optional<std::array<double, 3>> airlight;
  if (!airlight_path.empty())
    airlight = airlight_from_json(read_json_file(airlight_path));
  init.airlight = airlight;
  if (!init_depth_path.empty()) {
    init_depth = read_pfm(init_depth_path);
    init.depth = &init_depth;
  }
  if (!init_beta_path.empty()) {
    init_beta = read_pfm(init_beta_path);
    if (init_beta.plane_size() == 1)
      init.beta_scalar = init_beta.data[0];
    else
      init.beta_field = &init_beta;
  }
  if (!init_poses_path.empty()) {
    const json poses = read_json_file(init_poses_path);
    const int target = static_cast<int>(poses.size()) / 2;
    for (int i = 0; i < static_cast<int>(poses.size()); ++i) {
      if (static_cast<int>(poses.size()) == static_cast<int>(seq.frames.size()) &&
          i == target)
        continue;  // per-frame list with the identity target entry
      init_poses.push_back(pose_from_json(poses.at(i)));
    }
    init.poses = &init_poses;
  }

  ImageF reference;
  ObjectiveInputs inputs;
  if (!ref_path.empty()) {
    reference = read_ppm(ref_path);
    inputs.reference = &reference;
  }

  SolveResult res = solve(seq, cfg, init, inputs);

  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "dehazed");
  write_trace_csv(res.trace, (fs::path(out_dir) / "trace.csv").string());
  if (!res.status.nonfinite) {
    write_pfm(res.depth, (fs::path(out_dir) / "depth.pfm").string());
    write_pfm(res.beta, (fs::path(out_dir) / "beta.pfm").string());
    json poses = json::array();
    int source = 0;
    for (int f = 0; f < static_cast<int>(seq.frames.size()); ++f) {
      if (f == seq.target_index())
        poses.push_back(to_json(PoseSE3{}));
      else
        poses.push_back(to_json(res.state.poses[source++]));
    }
    write_json_atomic(poses, (fs::path(out_dir) / "poses.json").string());
    write_json_atomic(to_json(res.airlight), (fs::path(out_dir) / "airlight.json").string());
    for (size_t f = 0; f < res.dehazed.size(); ++f)
      write_ppm(res.dehazed[f],
                (fs::path(out_dir) / "dehazed" / detail::frame_name(static_cast<int>(f), ".ppm"))
                    .string());
  }

  RunManifest m;
  m.subcommand = "optimize";
  m.config = to_json(cfg);
  m.inputs = {{"frames", frames_dir},
              {"config", config_path},
              {"reference", ref_path},
              {"airlight", airlight_path}};
  m.outputs = {{"dir", out_dir},
               {"converged", res.status.converged},
               {"diverged", res.status.diverged},
               {"nonfinite", res.status.nonfinite},
               {"iterations", static_cast<long>(res.trace.size())},
               {"final_objective",
                res.trace.empty() ? 0.0 : res.trace.back().terms.total}};
  m.seed = cfg.seed;
  m.duration_seconds = watch.seconds();
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());

  if (res.status.diverged || res.status.nonfinite) {
    std::cerr << "optimize: " << res.status.message << " (trace preserved)\n";
    return kExitNumerical;
  }
  std::cout << "optimize: " << res.trace.size() << " iterations, final objective "
            << (res.trace.empty() ? 0.0 : res.trace.back().terms.total) << "\n";
  return kExitOk;
}

int run_dehaze(const std::string& hazy_dir, const std::string& depth_dir,
               const std::string& beta_path, const std::string& airlight_path,
               double t_min, const std::string& out_dir) {
  Stopwatch watch;
  const auto hazy_files = list_frames(hazy_dir, ".ppm");
  const auto depth_files = list_frames(depth_dir, ".pfm");
  if (hazy_files.empty()) {
    std::cerr << "dehaze: no .ppm frames under " << hazy_dir << "\n";
    return kExitInvalidInput;
  }
  if (hazy_files.size() != depth_files.size()) {
    std::cerr << "dehaze: frame/depth count mismatch\n";
    return kExitInvalidInput;
  }
  HazeParams params;
  params.beta = read_pfm(beta_path);
  params.airlight = airlight_from_json(read_json_file(airlight_path));
  fs::create_directories(out_dir);
  for (size_t i = 0; i < hazy_files.size(); ++i) {
    const ImageF hazy = read_ppm(hazy_files[i]);
    const ImageF depth = read_pfm(depth_files[i]);
    const ImageF clear = dehaze_closed_form(hazy, depth, params, t_min);
    write_ppm(clear, (fs::path(out_dir) / detail::frame_name(static_cast<int>(i), ".ppm"))
                         .string());
  }
  RunManifest m;
  m.subcommand = "dehaze";
  m.config = {{"t_min", t_min}};
  m.inputs = {{"hazy", hazy_dir}, {"depth", depth_dir}, {"beta", beta_path},
              {"airlight", airlight_path}};
  m.outputs = {{"dir", out_dir}, {"frames", static_cast<int>(hazy_files.size())}};
  m.duration_seconds = watch.seconds();
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  std::cout << "dehaze: wrote " << hazy_files.size() << " frames to " << out_dir << "\n";
  return kExitOk;
}

int run_eval_depth(const std::string& pred_dir, const std::string& gt_dir,
                   const std::string& csv_path, bool no_median) {
  Stopwatch watch;
  const auto pred_files = list_frames(pred_dir, ".pfm");
  const auto gt_files = list_frames(gt_dir, ".pfm");
  if (pred_files.empty() || pred_files.size() != gt_files.size()) {
    std::cerr << "eval-depth: prediction/ground-truth file mismatch\n";
    return kExitInvalidInput;
  }
  DepthEvalConfig cfg;
  cfg.median_scaling = !no_median;
  std::ofstream out(csv_path);
  if (!out) {
    std::cerr << "eval-depth: cannot open " << csv_path << "\n";
    return kExitInvalidInput;
  }
  out << "frame,abs_rel,rmse_log,delta1,delta2,delta3,valid_pixels\n";
  DepthMetrics agg;
  for (size_t i = 0; i < pred_files.size(); ++i) {
    const DepthMetrics d = depth_metrics(read_pfm(pred_files[i]), read_pfm(gt_files[i]), cfg);
    out << fs::path(pred_files[i]).filename().string() << "," << format_double(d.abs_rel)
        << "," << format_double(d.rmse_log) << "," << format_double(d.delta1) << ","
        << format_double(d.delta2) << "," << format_double(d.delta3) << ","
        << d.valid_pixels << "\n";
    agg.abs_rel += d.abs_rel;
    agg.rmse_log += d.rmse_log;
    agg.delta1 += d.delta1;
    agg.delta2 += d.delta2;
    agg.delta3 += d.delta3;
    agg.valid_pixels += d.valid_pixels;
  }
  const double n = static_cast<double>(pred_files.size());
  out << "aggregate," << format_double(agg.abs_rel / n) << ","
      << format_double(agg.rmse_log / n) << "," << format_double(agg.delta1 / n) << ","
      << format_double(agg.delta2 / n) << "," << format_double(agg.delta3 / n) << ","
      << agg.valid_pixels << "\n";
  std::cout << "eval-depth: abs_rel " << agg.abs_rel / n << ", delta1 " << agg.delta1 / n
            << " over " << pred_files.size() << " frames (" << watch.seconds() << "s)\n";
  RunManifest m;
  m.subcommand = "eval-depth";
  m.config = {{"median_scaling", !no_median}};
  m.inputs = {{"pred", pred_dir}, {"gt", gt_dir}};
  m.outputs = {{"csv", csv_path}};
  m.duration_seconds = watch.seconds();
  write_manifest(m, csv_path + ".manifest.json");
  return kExitOk;
}

int run_eval_image(const std::string& pred_dir, const std::string& gt_dir,
                   const std::string& csv_path) {
  Stopwatch watch;
  const auto pred_files = list_frames(pred_dir, ".ppm");
  const auto gt_files = list_frames(gt_dir, ".ppm");
  if (pred_files.empty() || pred_files.size() != gt_files.size()) {
    std::cerr << "eval-image: prediction/ground-truth file mismatch\n";
    return kExitInvalidInput;
  }
  std::ofstream out(csv_path);
  if (!out) {
    std::cerr << "eval-image: cannot open " << csv_path << "\n";
    return kExitInvalidInput;
  }
  out << "frame,psnr,ssim\n";
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (size_t i = 0; i < pred_files.size(); ++i) {
    const ImageF a = read_ppm(pred_files[i]);
    const ImageF b = read_ppm(gt_files[i]);
    const double p = psnr(a, b);
    const double s = ssim_mean(a, b);
    out << fs::path(pred_files[i]).filename().string() << "," << format_double(p) << ","
        << format_double(s) << "\n";
    psnr_sum += p;
    ssim_sum += s;
  }
  const double n = static_cast<double>(pred_files.size());
  out << "aggregate," << format_double(psnr_sum / n) << "," << format_double(ssim_sum / n)
      << "\n";
  std::cout << "eval-image: psnr " << psnr_sum / n << ", ssim " << ssim_sum / n << "\n";
  RunManifest m;
  m.subcommand = "eval-image";
  m.inputs = {{"pred", pred_dir}, {"gt", gt_dir}};
  m.outputs = {{"csv", csv_path}};
  m.duration_seconds = watch.seconds();
  write_manifest(m, csv_path + ".manifest.json");
  return kExitOk;
}

int run_gradcheck(const std::string& component, const std::string& seeds_arg, int size) {
  std::vector<uint64_t> seeds;
  const auto dash = seeds_arg.find('-');
  if (dash == std::string::npos) {
    seeds.push_back(std::stoull(seeds_arg));
  } else {
    const uint64_t lo = std::stoull(seeds_arg.substr(0, dash));
    const uint64_t hi = std::stoull(seeds_arg.substr(dash + 1));
    for (uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  bool all_pass = true;
  for (uint64_t seed : seeds) {
    const GradcheckReport rep = gradcheck(component, seed, size);
    for (const auto& e : rep.entries) {
      std::printf("seed %llu  %-12s %-10s max_rel_err %.3e  (thr %.0e)  %s\n",
                  static_cast<unsigned long long>(seed), e.component.c_str(),
                  e.block.c_str(), e.max_rel_err, e.threshold,
                  e.pass ? "pass" : "FAIL");
      all_pass = all_pass && e.pass;
    }
  }
  std::printf("gradcheck: %s\n", all_pass ? "all components pass" : "FAILURES detected");
  return all_pass ? kExitOk : kExitNumerical;
}

int run_wavelet(const std::string& in_path, const std::string& out_dir) {
  Stopwatch watch;
  const ImageF img = read_ppm(in_path);
  const HaarBands bands = haar_pool(img);
  fs::create_directories(out_dir);
  write_pfm(bands.ll, (fs::path(out_dir) / "ll.pfm").string());
  write_pfm(bands.lh, (fs::path(out_dir) / "lh.pfm").string());
  write_pfm(bands.hl, (fs::path(out_dir) / "hl.pfm").string());
  write_pfm(bands.hh, (fs::path(out_dir) / "hh.pfm").string());
  const ImageF stack = mfir_input(img);
  for (int c = 0; c < stack.channels; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "mfir_%02d.pfm", c);
    write_pfm(stack.channel(c), (fs::path(out_dir) / name).string());
  }
  RunManifest m;
  m.subcommand = "wavelet";
  m.inputs = {{"in", in_path}};
  m.outputs = {{"dir", out_dir}, {"mfir_channels", stack.channels}};
  m.duration_seconds = watch.seconds();
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  std::cout << "wavelet: wrote 4 bands and " << stack.channels
            << " stacked channels to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hazesfm: joint depth / scattering / pose estimation from hazy sequences"};
  app.require_subcommand(1);

  std::string scene_path, out_dir;
  auto* synth = app.add_subcommand("synth", "generate a synthetic hazy bundle");
  synth->add_option("--scene", scene_path, "scene spec JSON")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  std::string frames_dir, config_path, ref_path, airlight_path;
  std::string init_depth_path, init_beta_path, init_poses_path;
  std::string mode_flag, beta_mode_flag;
  bool deterministic = false;
  int threads = 0, iterations = 0;
  auto* optimize = app.add_subcommand("optimize", "jointly estimate depth, scattering and pose");
  optimize->add_option("--frames", frames_dir, "bundle directory (hazy/ + intrinsics.json)")
      ->required();
  optimize->add_option("--config", config_path, "optimizer config JSON");
  optimize->add_option("--out", out_dir, "output directory")->required();
  optimize->add_option("--ref", ref_path, "non-aligned clear reference frame (.ppm)");
  optimize->add_option("--airlight", airlight_path, "airlight JSON (else dark-channel estimate)");
  optimize->add_option("--init-depth", init_depth_path, "initial depth map (.pfm)");
  optimize->add_option("--init-beta", init_beta_path, "initial scattering (.pfm, 1x1 means scalar)");
  optimize->add_option("--init-poses", init_poses_path, "initial poses JSON");
  optimize->add_flag("--deterministic", deterministic, "fixed-order reductions");
  optimize->add_option("--threads", threads, "worker threads (or HAZESFM_THREADS)");
  optimize->add_option("--iterations", iterations, "max iterations per pyramid level");
  optimize->add_option("--mode", mode_flag, "dehaze mode: tied|free");
  optimize->add_option("--beta-mode", beta_mode_flag, "beta mode: scalar|field|fixed");

  std::string hazy_dir, depth_dir, beta_path;
  double t_min = 0.1;
  auto* dehaze = app.add_subcommand("dehaze", "closed-form dehazing from depth and scattering");
  dehaze->add_option("--hazy", hazy_dir, "directory of hazy .ppm frames")->required();
  dehaze->add_option("--depth", depth_dir, "directory of depth .pfm maps")->required();
  dehaze->add_option("--beta", beta_path, "scattering field .pfm (1x1 means scalar)")->required();
  dehaze->add_option("--airlight", airlight_path, "airlight JSON")->required();
  dehaze->add_option("--t-min", t_min, "transmission floor");
  dehaze->add_option("--out", out_dir, "output directory")->required();

  std::string pred_dir, gt_dir, csv_path;
  bool no_median = false;
  auto* eval_depth = app.add_subcommand("eval-depth", "depth metrics against ground truth");
  eval_depth->add_option("--pred", pred_dir, "predicted depth directory (.pfm)")->required();
  eval_depth->add_option("--gt", gt_dir, "ground-truth depth directory (.pfm)")->required();
  eval_depth->add_option("--csv", csv_path, "output CSV")->required();
  eval_depth->add_flag("--no-median-scaling", no_median, "disable median scaling");

  auto* eval_image = app.add_subcommand("eval-image", "PSNR/SSIM against ground truth");
  eval_image->add_option("--pred", pred_dir, "predicted frames (.ppm)")->required();
  eval_image->add_option("--gt", gt_dir, "ground-truth frames (.ppm)")->required();
  eval_image->add_option("--csv", csv_path, "output CSV")->required();

  std::string component = "all", seeds = "0";
  int size = 8;
  auto* gc = app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
  gc->add_option("--component", component,
                 "asm|warp|ssim|photometric|smoothness|objective|all");
  gc->add_option("--seed", seeds, "seed or inclusive range lo-hi");
  gc->add_option("--size", size, "instance side length");

  std::string in_path;
  auto* wavelet = app.add_subcommand("wavelet", "write Haar bands and the stacked input");
  wavelet->add_option("--in", in_path, "input image (.ppm)")->required();
  wavelet->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return run_synth(scene_path, out_dir);
    if (optimize->parsed())
      return run_optimize(frames_dir, config_path, out_dir, ref_path, airlight_path,
                          init_depth_path, init_beta_path, init_poses_path,
                          deterministic, threads, iterations, mode_flag, beta_mode_flag);
    if (dehaze->parsed())
      return run_dehaze(hazy_dir, depth_dir, beta_path, airlight_path, t_min, out_dir);
    if (eval_depth->parsed()) return run_eval_depth(pred_dir, gt_dir, csv_path, no_median);
    if (eval_image->parsed()) return run_eval_image(pred_dir, gt_dir, csv_path);
    if (gc->parsed()) return run_gradcheck(component, seeds, size);
    if (wavelet->parsed()) return run_wavelet(in_path, out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }
  return kExitUsage;
}

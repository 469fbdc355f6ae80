#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hazesfm/image_io.hpp"
#include "hazesfm/metrics.hpp"
#include "hazesfm/optimizer.hpp"
#include "hazesfm/scenegen.hpp"
#include "hazesfm/solver.hpp"

namespace hazesfm {

using nlohmann::json;

constexpr const char* kToolkitVersion = "0.1.0";

// ---------------------------------------------------------------------------
// JSON representations
// ---------------------------------------------------------------------------

inline json to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
}

inline CameraIntrinsics intrinsics_from_json(const json& j) {
  return {j.at("fx").get<double>(), j.at("fy").get<double>(),
          j.at("cx").get<double>(), j.at("cy").get<double>()};
}

inline json to_json(const PoseSE3& p) {
  return {{"axis_angle", {p.rotation[0], p.rotation[1], p.rotation[2]}},
          {"translation", {p.translation[0], p.translation[1], p.translation[2]}}};
}

inline PoseSE3 pose_from_json(const json& j) {
  PoseSE3 p;
  for (int i = 0; i < 3; ++i) {
    p.rotation[i] = j.at("axis_angle").at(i).get<double>();
    p.translation[i] = j.at("translation").at(i).get<double>();
  }
  return p;
}

inline json to_json(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

inline std::array<double, 3> airlight_from_json(const json& j) {
  if (j.is_number()) {
    const double v = j.get<double>();
    return {v, v, v};
  }
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline json to_json(const LossWeights& w) {
  return {{"eta", w.eta},       {"gamma", w.gamma},   {"xi", w.xi},
          {"omega1", w.omega1}, {"omega2", w.omega2}, {"alpha", w.alpha}};
}

inline LossWeights weights_from_json(const json& j) {
  LossWeights w;
  w.eta = j.value("eta", w.eta);
  w.gamma = j.value("gamma", w.gamma);
  w.xi = j.value("xi", w.xi);
  w.omega1 = j.value("omega1", w.omega1);
  w.omega2 = j.value("omega2", w.omega2);
  w.alpha = j.value("alpha", w.alpha);
  w.validate();
  return w;
}

inline json to_json(const OptimConfig& c) {
  return {{"mode", c.mode == DehazeMode::kTied ? "tied" : "free"},
          {"beta_mode", c.beta_mode == BetaMode::kScalar
                            ? "scalar"
                            : (c.beta_mode == BetaMode::kField ? "field" : "fixed")},
          {"pe_space", c.pe_space == PhotometricSpace::kHazy ? "hazy" : "dehazed"},
          {"antialias_warp", c.antialias_warp},
          {"fixed_beta", c.fixed_beta},
          {"weights", to_json(c.weights)},
          {"pe_weight", c.pe_weight},
          {"lr", {{"log_depth", c.lr_log_depth},
                  {"log_beta", c.lr_log_beta},
                  {"pose", c.lr_pose},
                  {"dehazed", c.lr_dehazed}}},
          {"max_iterations", c.max_iterations},
          {"pyramid_levels", c.pyramid_levels},
          {"tolerance", c.tolerance},
          {"tolerance_window", c.tolerance_window},
          {"divergence_window", c.divergence_window},
          {"depth_min", c.depth_min},
          {"depth_max", c.depth_max},
          {"beta_min", c.beta_min},
          {"beta_max", c.beta_max},
          {"t_min", c.t_min},
          {"init_depth", c.init_depth},
          {"init_beta", c.init_beta},
          {"beta_smooth_weight", c.beta_smooth_weight},
          {"deterministic", c.deterministic},
          {"seed", c.seed},
          {"threads", c.threads}};
}

inline OptimConfig config_from_json(const json& j) {
  OptimConfig c;
  if (j.contains("mode")) {
    const std::string m = j.at("mode").get<std::string>();
    if (m == "tied") c.mode = DehazeMode::kTied;
    else if (m == "free") c.mode = DehazeMode::kFree;
    else throw std::invalid_argument("config: unknown mode '" + m + "'");
  }
  if (j.contains("beta_mode")) {
    const std::string m = j.at("beta_mode").get<std::string>();
    if (m == "scalar") c.beta_mode = BetaMode::kScalar;
    else if (m == "field") c.beta_mode = BetaMode::kField;
    else if (m == "fixed") c.beta_mode = BetaMode::kFixed;
    else throw std::invalid_argument("config: unknown beta_mode '" + m + "'");
  }
  if (j.contains("pe_space")) {
    const std::string m = j.at("pe_space").get<std::string>();
    if (m == "hazy") c.pe_space = PhotometricSpace::kHazy;
    else if (m == "dehazed") c.pe_space = PhotometricSpace::kDehazed;
    else throw std::invalid_argument("config: unknown pe_space '" + m + "'");
  }
  c.antialias_warp = j.value("antialias_warp", c.antialias_warp);
  c.fixed_beta = j.value("fixed_beta", c.fixed_beta);
  if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"));
  c.pe_weight = j.value("pe_weight", c.pe_weight);
  if (j.contains("lr")) {
    const json& lr = j.at("lr");
    c.lr_log_depth = lr.value("log_depth", c.lr_log_depth);
    c.lr_log_beta = lr.value("log_beta", c.lr_log_beta);
    c.lr_pose = lr.value("pose", c.lr_pose);
    c.lr_dehazed = lr.value("dehazed", c.lr_dehazed);
  }
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.pyramid_levels = j.value("pyramid_levels", c.pyramid_levels);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.tolerance_window = j.value("tolerance_window", c.tolerance_window);
  c.divergence_window = j.value("divergence_window", c.divergence_window);
  c.depth_min = j.value("depth_min", c.depth_min);
  c.depth_max = j.value("depth_max", c.depth_max);
  c.beta_min = j.value("beta_min", c.beta_min);
  c.beta_max = j.value("beta_max", c.beta_max);
  c.t_min = j.value("t_min", c.t_min);
  c.init_depth = j.value("init_depth", c.init_depth);
  c.init_beta = j.value("init_beta", c.init_beta);
  c.beta_smooth_weight = j.value("beta_smooth_weight", c.beta_smooth_weight);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

inline json to_json(const SceneSpec& s) {
  json boxes = json::array();
  for (const auto& b : s.boxes)
    boxes.push_back({{"row0", b.row0}, {"row1", b.row1}, {"col0", b.col0},
                     {"col1", b.col1}, {"depth", b.depth}, {"thickness", b.thickness}});
  json traj = json::array();
  for (const auto& p : s.trajectory) traj.push_back(to_json(p));
  return {{"seed", s.seed},
          {"height", s.height},
          {"width", s.width},
          {"intrinsics", to_json(s.intrinsics)},
          {"plane", {{"depth_top", s.plane_depth_top}, {"depth_bottom", s.plane_depth_bottom}}},
          {"boxes", boxes},
          {"texture", {{"octaves", s.texture.octaves},
                       {"base_period", s.texture.base_period},
                       {"amplitude_decay", s.texture.amplitude_decay},
                       {"contrast", s.texture.contrast}}},
          {"beta", {{"uniform", s.beta.uniform},
                    {"value", s.beta.value},
                    {"min_value", s.beta.min_value},
                    {"max_value", s.beta.max_value},
                    {"cells", s.beta.cells}}},
          {"airlight", to_json(s.airlight)},
          {"trajectory", traj},
          {"depth_min", s.depth_min},
          {"depth_max", s.depth_max},
          {"max_disparity", s.max_disparity}};
}

inline SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec s;
  s.seed = j.value("seed", s.seed);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  if (j.contains("intrinsics")) s.intrinsics = intrinsics_from_json(j.at("intrinsics"));
  if (j.contains("plane")) {
    s.plane_depth_top = j.at("plane").value("depth_top", s.plane_depth_top);
    s.plane_depth_bottom = j.at("plane").value("depth_bottom", s.plane_depth_bottom);
  }
  if (j.contains("boxes"))
    for (const auto& b : j.at("boxes"))
      s.boxes.push_back({b.value("row0", 0), b.value("row1", 0), b.value("col0", 0),
                         b.value("col1", 0), b.value("depth", 1.0),
                         b.value("thickness", 0.5)});
  if (j.contains("texture")) {
    const json& t = j.at("texture");
    s.texture.octaves = t.value("octaves", s.texture.octaves);
    s.texture.base_period = t.value("base_period", s.texture.base_period);
    s.texture.amplitude_decay = t.value("amplitude_decay", s.texture.amplitude_decay);
    s.texture.contrast = t.value("contrast", s.texture.contrast);
  }
  if (j.contains("beta")) {
    const json& b = j.at("beta");
    s.beta.uniform = b.value("uniform", s.beta.uniform);
    s.beta.value = b.value("value", s.beta.value);
    s.beta.min_value = b.value("min_value", s.beta.min_value);
    s.beta.max_value = b.value("max_value", s.beta.max_value);
    s.beta.cells = b.value("cells", s.beta.cells);
  }
  if (j.contains("airlight")) s.airlight = airlight_from_json(j.at("airlight"));
  if (j.contains("trajectory"))
    for (const auto& p : j.at("trajectory")) s.trajectory.push_back(pose_from_json(p));
  s.depth_min = j.value("depth_min", s.depth_min);
  s.depth_max = j.value("depth_max", s.depth_max);
  s.max_disparity = j.value("max_disparity", s.max_disparity);
  return s;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

// Writes via a temporary file and rename so readers never observe a partial
// document.
inline void write_json_atomic(const json& j, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "level,iteration,total,rec,photometric,smooth,reference,adversarial,"
         "beta_smooth,mask_density\n";
  for (const auto& r : trace)
    out << r.level << "," << r.iteration << "," << format_double(r.terms.total) << ","
        << format_double(r.terms.rec) << "," << format_double(r.terms.photometric)
        << "," << format_double(r.terms.smooth) << ","
        << format_double(r.terms.reference) << "," << format_double(r.terms.adversarial)
        << "," << format_double(r.terms.beta_smooth) << ","
        << format_double(r.terms.mask_density) << "\n";
}

// ---------------------------------------------------------------------------
// Scene bundle directory layout:
//   clear/NNN.ppm hazy/NNN.ppm depth/NNN.pfm valid/NNN.pfm
//   beta.pfm airlight.json poses.json intrinsics.json
// ---------------------------------------------------------------------------

namespace detail {
inline std::string frame_name(int i, const char* ext) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d%s", i, ext);
  return buf;
}
}  // namespace detail

inline void write_bundle(const SceneBundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  for (const char* sub : {"clear", "hazy", "depth", "valid"})
    fs::create_directories(fs::path(dir) / sub);
  for (size_t f = 0; f < b.clear.size(); ++f) {
    const int i = static_cast<int>(f);
    write_ppm(b.clear[f], (fs::path(dir) / "clear" / detail::frame_name(i, ".ppm")).string());
    write_ppm(b.hazy[f], (fs::path(dir) / "hazy" / detail::frame_name(i, ".ppm")).string());
    write_pfm(b.depth[f], (fs::path(dir) / "depth" / detail::frame_name(i, ".pfm")).string());
    write_pfm(b.valid[f], (fs::path(dir) / "valid" / detail::frame_name(i, ".pfm")).string());
  }
  write_pfm(b.beta, (fs::path(dir) / "beta.pfm").string());
  write_json_atomic(to_json(b.airlight), (fs::path(dir) / "airlight.json").string());
  json poses = json::array();
  for (const auto& p : b.poses) poses.push_back(to_json(p));
  write_json_atomic(poses, (fs::path(dir) / "poses.json").string());
  write_json_atomic(to_json(b.intrinsics), (fs::path(dir) / "intrinsics.json").string());
}

inline std::vector<std::string> list_frames(const std::string& dir, const char* ext) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext)
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

struct FrameDir {
  std::vector<ImageF> frames;
  CameraIntrinsics intrinsics;
};

// Reads hazy/NNN.ppm (or the given subdirectory) plus intrinsics.json.
inline FrameDir read_frame_dir(const std::string& dir, const std::string& sub = "hazy") {
  namespace fs = std::filesystem;
  FrameDir out;
  const std::string frame_dir = (fs::path(dir) / sub).string();
  for (const auto& f : list_frames(frame_dir, ".ppm")) out.frames.push_back(read_ppm(f));
  if (out.frames.empty())
    throw std::runtime_error("no .ppm frames under " + frame_dir);
  const std::string kpath = (fs::path(dir) / "intrinsics.json").string();
  if (!fs::exists(kpath))
    throw std::runtime_error("missing intrinsics file " + kpath);
  out.intrinsics = intrinsics_from_json(read_json_file(kpath));
  return out;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct RunManifest {
  std::string subcommand;
  json config;
  json inputs;
  json outputs;
  uint64_t seed = 0;
  double duration_seconds = 0.0;
};

inline void write_manifest(const RunManifest& m, const std::string& path) {
  write_json_atomic(json{{"subcommand", m.subcommand},
                         {"config", m.config},
                         {"inputs", m.inputs},
                         {"outputs", m.outputs},
                         {"seed", m.seed},
                         {"toolkit_version", kToolkitVersion},
                         {"duration_seconds", m.duration_seconds}},
                    path);
}

}  // namespace hazesfm

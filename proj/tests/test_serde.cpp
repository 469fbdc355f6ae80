#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "hazesfm/serde.hpp"
#include "testutil.hpp"

using namespace hazesfm;

namespace {

std::filesystem::path tmp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "hazesfm_serde" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("loss weights round-trip through json with the documented keys", "[serde]") {
  LossWeights w;
  w.eta = 0.3;
  w.gamma = 0.1;
  w.xi = 2e-3;
  w.omega1 = 1e-2;
  w.omega2 = 5e-4;
  w.alpha = 0.7;
  const json j = to_json(w);
  for (const char* key : {"eta", "gamma", "xi", "omega1", "omega2", "alpha"})
    REQUIRE(j.contains(key));
  const LossWeights back = weights_from_json(j);
  CHECK(back.eta == w.eta);
  CHECK(back.gamma == w.gamma);
  CHECK(back.xi == w.xi);
  CHECK(back.omega1 == w.omega1);
  CHECK(back.omega2 == w.omega2);
  CHECK(back.alpha == w.alpha);
}

TEST_CASE("intrinsics and poses round-trip through json", "[serde]") {
  CameraIntrinsics k{101.5, 99.25, 47.5, 31.0};
  const CameraIntrinsics k2 = intrinsics_from_json(to_json(k));
  CHECK(k2.fx == k.fx);
  CHECK(k2.cy == k.cy);

  PoseSE3 p;
  p.rotation = {0.01, -0.02, 0.03};
  p.translation = {0.5, -0.25, 0.125};
  const PoseSE3 p2 = pose_from_json(to_json(p));
  for (int i = 0; i < 3; ++i) {
    CHECK(p2.rotation[i] == p.rotation[i]);
    CHECK(p2.translation[i] == p.translation[i]);
  }
}

TEST_CASE("airlight json accepts a scalar or a 3-array", "[serde]") {
  const auto a = airlight_from_json(json::parse("[0.9, 0.8, 0.7]"));
  CHECK(a[0] == 0.9);
  CHECK(a[2] == 0.7);
  const auto b = airlight_from_json(json::parse("0.85"));
  CHECK(b[0] == 0.85);
  CHECK(b[1] == 0.85);
}

TEST_CASE("optimizer config round-trips through json", "[serde]") {
  OptimConfig c;
  c.mode = DehazeMode::kFree;
  c.beta_mode = BetaMode::kField;
  c.weights.alpha = 0.6;
  c.lr_pose = 1e-4;
  c.max_iterations = 77;
  c.threads = 4;
  c.seed = 42;
  const OptimConfig back = config_from_json(to_json(c));
  CHECK(back.mode == DehazeMode::kFree);
  CHECK(back.beta_mode == BetaMode::kField);
  CHECK(back.weights.alpha == 0.6);
  CHECK(back.lr_pose == 1e-4);
  CHECK(back.max_iterations == 77);
  CHECK(back.threads == 4);
  CHECK(back.seed == 42);
}

TEST_CASE("scene specs round-trip through json", "[serde]") {
  SceneSpec s;
  s.seed = 5;
  s.height = 32;
  s.width = 48;
  s.boxes = {{1, 2, 3, 4, 5.0, 0.25}};
  PoseSE3 l;
  l.translation = {0.1, 0, 0};
  s.trajectory = {l, PoseSE3{}, inverse(l)};
  const SceneSpec back = scene_spec_from_json(to_json(s));
  CHECK(back.seed == 5);
  CHECK(back.width == 48);
  REQUIRE(back.boxes.size() == 1);
  CHECK(back.boxes[0].depth == 5.0);
  REQUIRE(back.trajectory.size() == 3);
  CHECK(back.trajectory[0].translation[0] == 0.1);
}

TEST_CASE("scene bundles survive a directory round trip", "[serde]") {
  SceneSpec s;
  s.seed = 9;
  s.height = 32;
  s.width = 32;
  s.intrinsics = {40, 40, 15.5, 15.5};
  s.plane_depth_top = 10.0;
  s.plane_depth_bottom = 4.0;
  PoseSE3 l, r;
  l.translation = {0.08, 0, 0};
  r.translation = {-0.08, 0, 0};
  s.trajectory = {l, PoseSE3{}, r};
  const SceneBundle b = generate(s);
  const auto dir = tmp_dir("bundle");
  write_bundle(b, dir.string());

  for (const char* sub : {"clear", "hazy", "depth", "valid"})
    CHECK(list_frames((dir / sub).string(), sub[0] == 'c' || sub[0] == 'h' ? ".ppm" : ".pfm")
              .size() == 3);
  const FrameDir frames = read_frame_dir(dir.string());
  REQUIRE(frames.frames.size() == 3);
  CHECK(frames.intrinsics.fx == 40);
  // Depth PFMs are bit-exact through the float payload.
  const ImageF d0 = read_pfm((dir / "depth" / "001.pfm").string());
  for (long i = 0; i < d0.size(); ++i)
    CHECK(d0.data[i] == static_cast<float>(b.depth[1].data[i]));
  const json poses = read_json_file((dir / "poses.json").string());
  REQUIRE(poses.size() == 3);
  const ImageF beta = read_pfm((dir / "beta.pfm").string());
  CHECK(beta.plane_size() == 1);
}

TEST_CASE("trace csv has one row per iteration plus a header", "[serde]") {
  std::vector<TraceRow> trace;
  for (int i = 0; i < 3; ++i) {
    TraceRow r;
    r.level = 1;
    r.iteration = i;
    r.terms.total = 0.5 / (i + 1);
    trace.push_back(r);
  }
  const auto dir = tmp_dir("csv");
  const std::string path = (dir / "trace.csv").string();
  write_trace_csv(trace, path);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 4);
}

TEST_CASE("manifests are written atomically with the toolkit version", "[serde]") {
  const auto dir = tmp_dir("manifest");
  RunManifest m;
  m.subcommand = "synth";
  m.seed = 7;
  m.duration_seconds = 0.25;
  const std::string path = (dir / "manifest.json").string();
  write_manifest(m, path);
  const json j = read_json_file(path);
  CHECK(j.at("subcommand") == "synth");
  CHECK(j.at("toolkit_version") == kToolkitVersion);
  CHECK(j.at("seed") == 7);
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
}

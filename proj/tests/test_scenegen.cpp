#include <catch2/catch_amalgamated.hpp>

#include "hazesfm/scenegen.hpp"
#include "testutil.hpp"

using namespace hazesfm;

namespace {

SceneSpec base_spec(uint64_t seed = 3) {
  SceneSpec s;
  s.seed = seed;
  s.height = 64;
  s.width = 64;
  s.intrinsics = {70, 70, 31.5, 31.5};
  s.plane_depth_top = 16.0;
  s.plane_depth_bottom = 4.0;
  s.boxes = {{12, 30, 10, 26, 3.5, 0.8}, {36, 54, 38, 56, 6.0, 1.0}};
  s.texture.base_period = 20.0;
  s.beta.uniform = true;
  s.beta.value = 0.05;
  PoseSE3 left, right;
  left.translation = {0.10, 0.005, -0.02};
  left.rotation = {0.0, 0.002, 0.0};
  right.translation = {-0.10, -0.005, 0.02};
  right.rotation = {0.0, -0.002, 0.0};
  s.trajectory = {left, PoseSE3{}, right};
  return s;
}

}  // namespace

TEST_CASE("identity trajectory reproduces the center frame", "[scenegen]") {
  SceneSpec s = base_spec();
  s.trajectory = {PoseSE3{}, PoseSE3{}, PoseSE3{}};
  SceneBundle b = generate(s);
  REQUIRE(b.clear.size() == 3);
  for (const auto& f : b.clear)
    for (long i = 0; i < f.size(); ++i)
      CHECK(f.data[i] == b.clear[1].data[i]);
  for (const auto& v : b.valid)
    for (double m : v.data) CHECK(m == 1.0);
}

TEST_CASE("generation is deterministic in the seed", "[scenegen]") {
  SceneBundle a = generate(base_spec(11));
  SceneBundle b = generate(base_spec(11));
  for (size_t f = 0; f < a.clear.size(); ++f) {
    CHECK(a.clear[f].data == b.clear[f].data);
    CHECK(a.hazy[f].data == b.hazy[f].data);
    CHECK(a.depth[f].data == b.depth[f].data);
    CHECK(a.valid[f].data == b.valid[f].data);
  }
  CHECK(a.beta.data == b.beta.data);
  SceneBundle c = generate(base_spec(12));
  CHECK(a.clear[1].data != c.clear[1].data);
}

TEST_CASE("hazy frames equal the scattering-model synthesis exactly", "[scenegen]") {
  SceneBundle b = generate(base_spec(7));
  HazeParams p;
  p.beta = b.beta;
  p.airlight = b.airlight;
  for (size_t f = 0; f < b.hazy.size(); ++f) {
    ImageF expect = synthesize_haze(b.clear[f], b.depth[f], p);
    CHECK(b.hazy[f].data == expect.data);
  }
}

TEST_CASE("ground-truth warps agree to resampling error", "[scenegen]") {
  SceneBundle b = generate(base_spec(5));
  ConsistencyReport rep = self_consistency_report(b);
  REQUIRE(rep.mean_abs_error.size() == 2);
  for (double e : rep.mean_abs_error) CHECK(e <= 2e-3);
  CHECK(rep.pass);
}

TEST_CASE("a corrupted pose fails the consistency check", "[scenegen]") {
  SceneBundle b = generate(base_spec(5));
  b.poses[0].translation[0] += 0.2;
  ConsistencyReport rep = self_consistency_report(b);
  CHECK_FALSE(rep.pass);
  CHECK(rep.worst > 2e-3);
}

TEST_CASE("zero-baseline bundles have near-zero warp error", "[scenegen]") {
  SceneSpec s = base_spec();
  s.trajectory = {PoseSE3{}, PoseSE3{}, PoseSE3{}};
  ConsistencyReport rep = self_consistency_report(generate(s));
  for (double e : rep.mean_abs_error) CHECK(e < 1e-12);
}

TEST_CASE("disparity violations reject the spec", "[scenegen]") {
  SceneSpec s = base_spec();
  s.trajectory[0].translation = {1.5, 0.0, 0.0};  // far beyond 8 px at 3.5 m
  CHECK_THROWS_WITH(generate(s), Catch::Matchers::ContainsSubstring("disparity"));
}

TEST_CASE("generated depth respects bounds and boxes sit in front", "[scenegen]") {
  SceneSpec s = base_spec(9);
  SceneBundle b = generate(s);
  for (const auto& d : b.depth) {
    CHECK(d.min_value() >= s.depth_min);
    CHECK(d.max_value() <= s.depth_max);
  }
  // The first box's front face is at its configured depth in the center view.
  const ImageF& d0 = b.depth[static_cast<size_t>(b.target)];
  CHECK(d0.at(0, 20, 18) == Catch::Approx(3.5).margin(1e-9));
}

TEST_CASE("smooth beta fields stay inside their range", "[scenegen]") {
  SceneSpec s = base_spec(13);
  s.beta.uniform = false;
  s.beta.min_value = 0.02;
  s.beta.max_value = 0.08;
  SceneBundle b = generate(s);
  REQUIRE(b.beta.height == s.height);
  CHECK(b.beta.min_value() >= 0.02);
  CHECK(b.beta.max_value() <= 0.08);
  const double spread = b.beta.max_value() - b.beta.min_value();
  CHECK(spread > 0.01);  // genuinely non-uniform
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hazesfm/geometry.hpp"
#include "testutil.hpp"

using namespace hazesfm;
using testutil::Rng;

namespace {

PoseSE3 random_pose(Rng& rng, double rot_scale, double trans_scale) {
  PoseSE3 p;
  for (int i = 0; i < 3; ++i) {
    p.rotation[i] = rng.uniform(-rot_scale, rot_scale);
    p.translation[i] = rng.uniform(-trans_scale, trans_scale);
  }
  return p;
}

}  // namespace

TEST_CASE("rotation matrices are orthonormal and round-trip the axis-angle", "[geometry]") {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    PoseSE3 p = random_pose(rng, 0.9, 0.0);  // |w| < pi
    const Mat3 r = p.rotation_matrix();
    const Mat3 rtr = m3::mul(m3::transpose(r), r);
    const Mat3 eye = m3::identity();
    for (int i = 0; i < 9; ++i) CHECK(std::abs(rtr[i] - eye[i]) < 1e-9);
    const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
                       r[1] * (r[3] * r[8] - r[5] * r[6]) +
                       r[2] * (r[3] * r[7] - r[4] * r[6]);
    CHECK(det == Catch::Approx(1.0).margin(1e-9));
    const Vec3 back = axis_angle_from_matrix(r);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(back[i] - p.rotation[i]) < 1e-9);
  }
}

TEST_CASE("compose with inverse is the identity pose", "[geometry]") {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    PoseSE3 p = random_pose(rng, 1.2, 2.0);
    PoseSE3 id = compose(p, inverse(p));
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(id.rotation[i]) < 1e-9);
      CHECK(std::abs(id.translation[i]) < 1e-9);
    }
  }
}

TEST_CASE("reproject under the identity pose is the pixel grid", "[geometry]") {
  ImageF depth(1, 4, 5, 3.0);
  CameraIntrinsics K{50, 50, 2.0, 1.5};
  auto rp = reproject(depth, PoseSE3{}, K);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      CHECK(rp.coords.at(0, y, x) == Catch::Approx(x).margin(1e-12));
      CHECK(rp.coords.at(1, y, x) == Catch::Approx(y).margin(1e-12));
      CHECK(rp.valid.at(0, y, x) == 1.0);
    }
}

TEST_CASE("reproject hand pinhole arithmetic", "[geometry]") {
  ImageF depth(1, 64, 64, 2.0);
  CameraIntrinsics K{100, 100, 32, 32};
  PoseSE3 pose;
  pose.translation = {0.1, 0.0, 0.0};
  auto rp = reproject(depth, pose, K);
  CHECK(rp.coords.at(0, 32, 32) == Catch::Approx(37.0));  // 100*0.1/2 + 32
  CHECK(rp.coords.at(1, 32, 32) == Catch::Approx(32.0));
}

TEST_CASE("principal point is fixed under pure z-translation", "[geometry]") {
  ImageF depth(1, 9, 9, 4.0);
  CameraIntrinsics K{80, 80, 4, 4};
  PoseSE3 pose;
  pose.translation = {0.0, 0.0, 0.5};
  auto rp = reproject(depth, pose, K);
  CHECK(rp.coords.at(0, 4, 4) == Catch::Approx(4.0));
  CHECK(rp.coords.at(1, 4, 4) == Catch::Approx(4.0));
  CHECK(rp.source_depth.at(0, 4, 4) == Catch::Approx(4.5));
}

TEST_CASE("bilinear sampling reproduces exact pixels at integer coords", "[geometry]") {
  Rng rng(6);
  ImageF src = testutil::random_image(rng, 3, 5, 6);
  ImageF coords(2, 5, 6);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      coords.at(0, y, x) = x;
      coords.at(1, y, x) = y;
    }
  WarpResult w = bilinear_sample(src, coords);
  for (long i = 0; i < src.size(); ++i) CHECK(w.warped.data[i] == src.data[i]);
  for (double v : w.valid.data) CHECK(v == 1.0);
}

TEST_CASE("bilinear midpoint of a 2x2 block", "[geometry]") {
  ImageF src(1, 2, 2);
  src.at(0, 0, 0) = 0;
  src.at(0, 0, 1) = 1;
  src.at(0, 1, 0) = 1;
  src.at(0, 1, 1) = 0;
  ImageF coords(2, 1, 1);
  coords.at(0, 0, 0) = 0.5;
  coords.at(1, 0, 0) = 0.5;
  WarpResult w = bilinear_sample(src, coords);
  CHECK(w.warped.data[0] == Catch::Approx(0.5));
}

TEST_CASE("bilinear sampling matches the 4-neighbor formula", "[geometry]") {
  Rng rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    ImageF src = testutil::random_image(rng, 1, 6, 7);
    ImageF coords(2, 1, 1);
    const double u = rng.uniform(0.0, 6.0);
    const double v = rng.uniform(0.0, 5.0);
    coords.at(0, 0, 0) = u;
    coords.at(1, 0, 0) = v;
    WarpResult w = bilinear_sample(src, coords);
    const int x0 = std::min(static_cast<int>(std::floor(u)), 5);
    const int y0 = std::min(static_cast<int>(std::floor(v)), 4);
    const double fu = u - x0, fv = v - y0;
    const double expect =
        (1 - fu) * (1 - fv) * src.at(0, y0, x0) + fu * (1 - fv) * src.at(0, y0, x0 + 1) +
        (1 - fu) * fv * src.at(0, y0 + 1, x0) + fu * fv * src.at(0, y0 + 1, x0 + 1);
    CHECK(std::abs(w.warped.data[0] - expect) < 1e-7);
  }
}

TEST_CASE("out-of-bounds samples are clamped but marked invalid", "[geometry]") {
  ImageF src(1, 3, 3, 0.5);
  ImageF coords(2, 1, 2);
  coords.at(0, 0, 0) = -1.5;
  coords.at(1, 0, 0) = 0.0;
  coords.at(0, 0, 1) = 1.0;
  coords.at(1, 0, 1) = 1.0;
  WarpResult w = bilinear_sample(src, coords);
  CHECK(w.valid.at(0, 0, 0) == 0.0);
  CHECK(w.valid.at(0, 0, 1) == 1.0);
  CHECK(w.warped.at(0, 0, 0) == Catch::Approx(0.5));  // clamp-to-edge value
}

TEST_CASE("warp under the identity pose is the identity", "[geometry]") {
  Rng rng(10);
  ImageF src = testutil::random_image(rng, 3, 6, 6);
  ImageF depth = testutil::random_image(rng, 1, 6, 6, 1.0, 10.0);
  CameraIntrinsics K{60, 60, 2.5, 2.5};
  WarpResult w = warp_frame(src, depth, PoseSE3{}, K);
  for (long i = 0; i < src.size(); ++i)
    CHECK(w.warped.data[i] == Catch::Approx(src.data[i]).margin(1e-12));
}

TEST_CASE("large translation invalidates most of the frame", "[geometry]") {
  ImageF src(3, 8, 8, 0.5);
  ImageF depth(1, 8, 8, 2.0);
  CameraIntrinsics K{80, 80, 3.5, 3.5};
  PoseSE3 pose;
  pose.translation = {5.0, 0.0, 0.0};  // disparity of 200 px
  WarpResult w = warp_frame(src, depth, pose, K);
  double density = 0.0;
  for (double v : w.valid.data) density += v;
  CHECK(density == 0.0);
}

namespace {

// Scalar probe for warp gradients: sum(upstream * warped).
double warp_probe(const ImageF& src, const ImageF& depth, const PoseSE3& pose,
                  const CameraIntrinsics& K, const ImageF& upstream) {
  WarpResult w = warp_frame(src, depth, pose, K);
  double s = 0.0;
  for (long i = 0; i < w.warped.size(); ++i) {
    const long pix = i % w.valid.size();
    if (w.valid.data[pix] != 0.0) s += upstream.data[i] * w.warped.data[i];
  }
  return s;
}

}  // namespace

TEST_CASE("warp gradients match finite differences", "[geometry]") {
  Rng rng(12);
  // A smooth source keeps the finite-difference probe away from bilinear
  // kinks at integer coordinates.
  ImageF src(1, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      src.at(0, y, x) = 0.5 + 0.3 * std::sin(0.7 * x + 0.4 * y) + 0.1 * std::cos(0.9 * y);
  ImageF depth = testutil::random_image(rng, 1, 8, 8, 3.0, 6.0);
  CameraIntrinsics K{40, 40, 3.5, 3.5};
  PoseSE3 pose;
  pose.rotation = {0.01, -0.02, 0.005};
  pose.translation = {0.05, -0.03, 0.02};
  ImageF upstream = testutil::random_image(rng, 1, 8, 8, -1.0, 1.0);

  WarpResult w = warp_frame(src, depth, pose, K);
  ImageF g_log_depth(1, 8, 8, 0.0);
  std::array<double, 6> g_pose{};
  ImageF g_src(1, 8, 8, 0.0);
  ImageF masked_up = upstream;
  for (long i = 0; i < masked_up.size(); ++i)
    if (w.valid.data[i] == 0.0) masked_up.data[i] = 0.0;
  warp_backward(src, depth, pose, K, w, masked_up, &g_log_depth, &g_pose, &g_src);

  SECTION("pose path") {
    double* params[6] = {&pose.rotation[0], &pose.rotation[1], &pose.rotation[2],
                         &pose.translation[0], &pose.translation[1], &pose.translation[2]};
    for (int i = 0; i < 6; ++i) {
      const double fd = testutil::central_difference(
          [&] { return warp_probe(src, depth, pose, K, upstream); }, *params[i], 1e-5);
      CHECK(testutil::rel_err(g_pose[i], fd, 1e-4) < 1e-3);
    }
  }
  SECTION("log-depth path") {
    for (int y = 2; y < 6; ++y)
      for (int x = 2; x < 6; ++x) {
        double log_d = std::log(depth.at(0, y, x));
        const double fd = testutil::central_difference(
            [&] {
              ImageF d2 = depth;
              d2.at(0, y, x) = std::exp(log_d);
              return warp_probe(src, d2, pose, K, upstream);
            },
            log_d, 1e-4);
        CHECK(testutil::rel_err(g_log_depth.at(0, y, x), fd, 1e-5) < 1e-3);
      }
  }
  SECTION("source path") {
    for (int y = 2; y < 6; ++y)
      for (int x = 2; x < 6; ++x) {
        const double fd = testutil::central_difference(
            [&] { return warp_probe(src, depth, pose, K, upstream); }, src.at(0, y, x),
            1e-4);
        CHECK(testutil::rel_err(g_src.at(0, y, x), fd, 1e-5) < 1e-3);
      }
  }
}

TEST_CASE("warp gradients are zero for zero upstream", "[geometry]") {
  Rng rng(13);
  ImageF src = testutil::random_image(rng, 1, 6, 6);
  ImageF depth(1, 6, 6, 2.0);
  CameraIntrinsics K{30, 30, 2.5, 2.5};
  WarpResult w = warp_frame(src, depth, PoseSE3{}, K);
  ImageF up(1, 6, 6, 0.0);
  ImageF g_log_depth(1, 6, 6, 0.0);
  std::array<double, 6> g_pose{};
  warp_backward(src, depth, PoseSE3{}, K, w, up, &g_log_depth, &g_pose, nullptr);
  for (double v : g_log_depth.data) CHECK(v == 0.0);
  for (double v : g_pose) CHECK(v == 0.0);
}

TEST_CASE("frame sequence validation", "[geometry]") {
  FrameSequence seq;
  seq.frames = {ImageF(3, 4, 4, 0.5), ImageF(3, 4, 4, 0.5), ImageF(3, 4, 4, 0.5)};
  seq.window = 1;
  seq.intrinsics = {10, 10, 1.5, 1.5};
  CHECK_NOTHROW(seq.validate());
  CHECK(seq.target_index() == 1);
  seq.frames.pop_back();
  CHECK_THROWS_AS(seq.validate(), std::invalid_argument);
}

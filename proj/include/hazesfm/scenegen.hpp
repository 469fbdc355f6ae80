#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hazesfm/geometry.hpp"
#include "hazesfm/image.hpp"
#include "hazesfm/scattering.hpp"

namespace hazesfm {

// Deterministic synthetic hazy sequences with exact ground truth. The scene
// is a slanted ground plane plus axis-aligned boxes, textured with seeded
// lattice value noise painted from the center view. Adjacent frames are
// backward warps of the center frame, so photometric ground truth is exact up
// to one bilinear resampling; pixels occluded or out of frame are recorded in
// per-frame validity masks.

struct SceneBox {
  int row0 = 0, row1 = 0, col0 = 0, col1 = 0;  // image rect in the center view
  double depth = 1.0;                          // front-face depth (meters)
  double thickness = 0.5;
};

struct TextureSpec {
  int octaves = 4;
  double base_period = 24.0;     // pixels, halved per octave
  double amplitude_decay = 0.5;  // per-octave amplitude factor
  double contrast = 0.8;         // output range is 0.5 +- contrast/2
};

struct BetaSpec {
  bool uniform = true;
  double value = 0.05;      // uniform case
  double min_value = 0.02;  // smooth-field case: lattice noise range
  double max_value = 0.08;
  int cells = 4;  // lattice resolution of the smooth field
};

struct SceneSpec {
  uint64_t seed = 0;
  int height = 96, width = 96;
  CameraIntrinsics intrinsics{100, 100, 47.5, 47.5};
  double plane_depth_top = 18.0;    // depth at the top image row, center column
  double plane_depth_bottom = 4.0;  // depth at the bottom row
  std::vector<SceneBox> boxes;
  TextureSpec texture;
  BetaSpec beta;
  std::array<double, 3> airlight{0.85, 0.82, 0.8};
  std::vector<PoseSE3> trajectory;  // center-to-frame transforms; middle entry identity
  double depth_min = 0.1, depth_max = 100.0;
  double max_disparity = 8.0;
};

struct SceneBundle {
  std::vector<ImageF> clear, hazy, depth, valid;
  ImageF beta;  // 1xhxw
  std::array<double, 3> airlight{};
  std::vector<PoseSE3> poses;
  CameraIntrinsics intrinsics;
  int target = 0;
};

namespace noise {

inline uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double lattice_value(uint64_t seed, uint64_t tag, int64_t ix, int64_t iy) {
  uint64_t h = mix(seed, tag);
  h = mix(h, static_cast<uint64_t>(ix) * 0x100000001b3ULL);
  h = mix(h, static_cast<uint64_t>(iy));
  return (h >> 11) * (1.0 / 9007199254740992.0);
}

// Seeded lattice value noise with bilinear interpolation between lattice
// corners, summed over octaves.
inline double value_noise(uint64_t seed, uint64_t tag, double x, double y,
                          const TextureSpec& t) {
  double acc = 0.0, norm = 0.0, amp = 1.0, period = t.base_period;
  for (int o = 0; o < t.octaves; ++o) {
    const double gx = x / period, gy = y / period;
    const int64_t ix = static_cast<int64_t>(std::floor(gx));
    const int64_t iy = static_cast<int64_t>(std::floor(gy));
    const double fx = gx - ix, fy = gy - iy;
    const uint64_t otag = mix(tag, static_cast<uint64_t>(o) + 17);
    const double v00 = lattice_value(seed, otag, ix, iy);
    const double v01 = lattice_value(seed, otag, ix + 1, iy);
    const double v10 = lattice_value(seed, otag, ix, iy + 1);
    const double v11 = lattice_value(seed, otag, ix + 1, iy + 1);
    const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                     fy * ((1 - fx) * v10 + fx * v11);
    acc += amp * v;
    norm += amp;
    amp *= t.amplitude_decay;
    period *= 0.5;
  }
  return acc / norm;
}

}  // namespace noise

namespace scene_detail {

struct Plane {
  Vec3 normal{0, 0, 1};
  double offset = 1.0;  // normal . X = offset
};

// Plane through the top-row and bottom-row anchor depths at the principal
// column, with its normal in the y-z plane.
inline Plane make_ground_plane(const SceneSpec& s) {
  const auto ray_top = s.intrinsics.ray(s.intrinsics.cx, 0.0);
  const auto ray_bot = s.intrinsics.ray(s.intrinsics.cx, s.height - 1.0);
  const Vec3 p1{0.0, ray_top[1] * s.plane_depth_top, s.plane_depth_top};
  const Vec3 p2{0.0, ray_bot[1] * s.plane_depth_bottom, s.plane_depth_bottom};
  Vec3 n{0.0, p2[2] - p1[2], p1[1] - p2[1]};
  const double len = m3::norm(n);
  if (len < 1e-12) throw std::invalid_argument("scene: degenerate ground plane");
  for (auto& v : n) v /= len;
  double off = m3::dot(n, p1);
  if (off < 0) {
    for (auto& v : n) v = -v;
    off = -off;
  }
  return {n, off};
}

struct Box3D {
  Vec3 lo, hi;
};

inline Box3D make_box(const SceneSpec& s, const SceneBox& b) {
  const double z0 = b.depth, z1 = b.depth + b.thickness;
  const double x0 = (b.col0 - s.intrinsics.cx) / s.intrinsics.fx * z0;
  const double x1 = (b.col1 - s.intrinsics.cx) / s.intrinsics.fx * z0;
  const double y0 = (b.row0 - s.intrinsics.cy) / s.intrinsics.fy * z0;
  const double y1 = (b.row1 - s.intrinsics.cy) / s.intrinsics.fy * z0;
  return {{std::min(x0, x1), std::min(y0, y1), z0},
          {std::max(x0, x1), std::max(y0, y1), z1}};
}

// First positive hit along origin + t * dir; +inf on a miss.
inline double ray_depth(const Vec3& origin, const Vec3& dir, const Plane& plane,
                        const std::vector<Box3D>& boxes) {
  double best = std::numeric_limits<double>::infinity();
  const double denom = m3::dot(plane.normal, dir);
  if (denom > 1e-12) {
    const double t = (plane.offset - m3::dot(plane.normal, origin)) / denom;
    if (t > 0) best = t;
  }
  for (const auto& b : boxes) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(dir[a]) < 1e-15) {
        if (origin[a] < b.lo[a] || origin[a] > b.hi[a]) miss = true;
        continue;
      }
      double ta = (b.lo[a] - origin[a]) / dir[a];
      double tb = (b.hi[a] - origin[a]) / dir[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) miss = true;
    }
    if (!miss && t0 > 0 && t0 < best) best = t0;
  }
  return best;
}

// Depth map of the scene seen from `pose` (a center-to-view transform); the
// ray parameter equals the view-space depth because rays have unit z.
inline ImageF raycast_depth(const SceneSpec& s, const Plane& plane,
                            const std::vector<Box3D>& boxes, const PoseSE3& pose) {
  const Mat3 rt = m3::transpose(pose.rotation_matrix());
  const Vec3 origin = m3::mul(rt, Vec3{-pose.translation[0], -pose.translation[1],
                                       -pose.translation[2]});
  ImageF depth(1, s.height, s.width);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const Vec3 dir = m3::mul(rt, s.intrinsics.ray(x, y));
      const double d = ray_depth(origin, dir, plane, boxes);
      if (!std::isfinite(d))
        throw std::invalid_argument("scene: a ray misses every surface");
      depth.at(0, y, x) = d;
    }
  return depth;
}

}  // namespace scene_detail

// Scene texture, painted in the center view's pixel coordinates and defined
// at continuous positions, so adjacent views can be rendered exactly.
inline double texture_at(const SceneSpec& s, int channel, double x, double y) {
  const double lo = 0.5 - s.texture.contrast / 2.0;
  return lo + s.texture.contrast *
                  noise::value_noise(s.seed, 1000 + channel, x, y, s.texture);
}

inline ImageF render_noise_texture(const SceneSpec& s) {
  ImageF img(3, s.height, s.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) img.at(c, y, x) = texture_at(s, c, x, y);
  return img;
}

inline ImageF smooth_beta_field(const SceneSpec& s) {
  ImageF beta(1, s.height, s.width);
  TextureSpec t;
  t.octaves = 1;
  t.base_period = static_cast<double>(std::max(s.height, s.width)) /
                  std::max(1, s.beta.cells);
  t.amplitude_decay = 1.0;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const double v = noise::value_noise(s.seed, 777, x, y, t);
      beta.at(0, y, x) = s.beta.min_value + (s.beta.max_value - s.beta.min_value) * v;
    }
  return beta;
}

inline SceneBundle generate(const SceneSpec& spec) {
  if (spec.trajectory.size() < 3 || spec.trajectory.size() % 2 == 0)
    throw std::invalid_argument("scene: trajectory needs an odd count >= 3");
  const int target = static_cast<int>(spec.trajectory.size()) / 2;
  {
    const PoseSE3& mid = spec.trajectory[static_cast<size_t>(target)];
    if (m3::norm(mid.rotation) > 1e-12 || m3::norm(mid.translation) > 1e-12)
      throw std::invalid_argument("scene: middle trajectory pose must be identity");
  }
  spec.intrinsics.validate(spec.width, spec.height);

  const auto plane = scene_detail::make_ground_plane(spec);
  std::vector<scene_detail::Box3D> boxes;
  for (const auto& b : spec.boxes) boxes.push_back(scene_detail::make_box(spec, b));

  SceneBundle out;
  out.intrinsics = spec.intrinsics;
  out.airlight = spec.airlight;
  out.poses = spec.trajectory;
  out.target = target;
  out.beta = spec.beta.uniform ? ImageF(1, 1, 1, spec.beta.value) : smooth_beta_field(spec);

  // Center view: analytic depth + painted texture.
  const ImageF clear0 = render_noise_texture(spec);
  std::vector<ImageF> depths;
  for (const auto& pose : spec.trajectory)
    depths.push_back(scene_detail::raycast_depth(spec, plane, boxes, pose));
  const ImageF& depth0 = depths[static_cast<size_t>(target)];
  for (const auto& d : depths)
    if (d.min_value() < spec.depth_min || d.max_value() > spec.depth_max)
      throw std::invalid_argument("scene: depth outside the configured bounds");

  // Disparity bound, measured by reprojecting the center view into each frame.
  for (size_t f = 0; f < spec.trajectory.size(); ++f) {
    if (static_cast<int>(f) == target) continue;
    const auto rp = reproject(depth0, spec.trajectory[f], spec.intrinsics);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        if (rp.valid.at(0, y, x) == 0.0)
          throw std::invalid_argument("scene: reprojected depth not positive");
        const double du = std::abs(rp.coords.at(0, y, x) - x);
        const double dv = std::abs(rp.coords.at(1, y, x) - y);
        if (std::max(du, dv) > spec.max_disparity)
          throw std::invalid_argument("scene: induced disparity exceeds the bound of " +
                                      std::to_string(spec.max_disparity) + " px");
      }
  }

  // Each adjacent frame is a backward warp of the center frame through its
  // analytic depth; occluded or out-of-frame pixels are masked.
  for (size_t f = 0; f < spec.trajectory.size(); ++f) {
    const PoseSE3& pose = spec.trajectory[f];
    const bool is_identity =
        m3::norm(pose.rotation) == 0.0 && m3::norm(pose.translation) == 0.0;
    if (static_cast<int>(f) == target || is_identity) {
      out.clear.push_back(clear0);
      out.valid.push_back(ImageF(1, spec.height, spec.width, 1.0));
    } else {
      // Render by evaluating the painted texture at the exact reprojected
      // center-view position, so ground-truth warps carry no resampling
      // error of their own.
      const PoseSE3 to_center = inverse(pose);
      const auto rp = reproject(depths[f], to_center, spec.intrinsics);
      ImageF frame(3, spec.height, spec.width, 0.0);
      ImageF valid(1, spec.height, spec.width, 0.0);
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
          const double u = rp.coords.at(0, y, x);
          const double v = rp.coords.at(1, y, x);
          for (int c = 0; c < 3; ++c) frame.at(c, y, x) = texture_at(spec, c, u, v);
          if (rp.valid.at(0, y, x) == 0.0) continue;
          if (u < 0.0 || v < 0.0 || u > spec.width - 1.0 || v > spec.height - 1.0)
            continue;
          // Occlusion: the point must be the first surface hit from the
          // center view along the ray through its projection.
          const double zc = rp.source_depth.at(0, y, x);
          const Vec3 dir = spec.intrinsics.ray(u, v);
          const double dc = scene_detail::ray_depth({0, 0, 0}, dir, plane, boxes);
          if (zc > dc * (1.0 + 1e-6) + 1e-9) continue;
          valid.at(0, y, x) = 1.0;
        }
      out.clear.push_back(std::move(frame));
      out.valid.push_back(std::move(valid));
    }
    out.depth.push_back(depths[f]);
  }

  // Haze synthesis with the shared scattering field.
  HazeParams params;
  params.beta = out.beta;
  params.airlight = spec.airlight;
  for (size_t f = 0; f < out.clear.size(); ++f)
    out.hazy.push_back(synthesize_haze(out.clear[f], out.depth[f], params));
  return out;
}

struct ConsistencyReport {
  std::vector<double> mean_abs_error;  // one entry per adjacent frame
  double worst = 0.0;
  double threshold = 2e-3;
  bool pass = false;
};

// Warps each adjacent clear frame onto the center frame with the ground-truth
// depth and pose; the mean absolute error on mutually valid pixels should be
// resampling error only.
inline ConsistencyReport self_consistency_report(const SceneBundle& b,
                                                 double threshold = 2e-3) {
  ConsistencyReport rep;
  rep.threshold = threshold;
  const ImageF& target = b.clear[static_cast<size_t>(b.target)];
  const ImageF& depth0 = b.depth[static_cast<size_t>(b.target)];
  for (size_t f = 0; f < b.clear.size(); ++f) {
    if (static_cast<int>(f) == b.target) continue;
    const auto rp = reproject(depth0, b.poses[f], b.intrinsics);
    WarpResult w = bilinear_sample(b.clear[f], rp.coords);
    WarpResult vmask = bilinear_sample(b.valid[f], rp.coords);
    WarpResult ds = bilinear_sample(b.depth[f], rp.coords);
    double err = 0.0;
    long n = 0;
    for (int y = 0; y < target.height; ++y)
      for (int x = 0; x < target.width; ++x) {
        if (w.valid.at(0, y, x) == 0.0 || rp.valid.at(0, y, x) == 0.0) continue;
        if (vmask.warped.at(0, y, x) < 0.999) continue;  // touches masked pixels
        // Exclude center pixels occluded in the adjacent view.
        const double z = rp.source_depth.at(0, y, x);
        if (z > ds.warped.at(0, y, x) * 1.01 + 0.02) continue;
        for (int c = 0; c < 3; ++c) {
          err += std::abs(w.warped.at(c, y, x) - target.at(c, y, x));
          ++n;
        }
      }
    rep.mean_abs_error.push_back(n > 0 ? err / n : 0.0);
  }
  for (double e : rep.mean_abs_error) rep.worst = std::max(rep.worst, e);
  rep.pass = rep.worst <= threshold;
  return rep;
}

}  // namespace hazesfm

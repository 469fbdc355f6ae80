#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "hazesfm/image.hpp"

namespace hazesfm {

using Mat3 = std::array<double, 9>;  // row-major 3x3
using Vec3 = std::array<double, 3>;

namespace m3 {

inline Mat3 identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Vec3 mul(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
  return r;
}

inline Mat3 transpose(const Mat3& m) {
  return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

inline Mat3 skew(const Vec3& v) {
  return {0, -v[2], v[1], v[2], 0, -v[0], -v[1], v[0], 0};
}

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline Mat3 add(const Mat3& a, const Mat3& b, double sb = 1.0) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r[i] = a[i] + sb * b[i];
  return r;
}

}  // namespace m3

// Pinhole intrinsics (pixel units). Pixel (0,0) is the center of the top-left
// pixel; coordinates are (x = column, y = row).
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;

  void validate(int width = 0, int height = 0) const {
    if (!(fx > 0.0 && fy > 0.0))
      throw std::invalid_argument("CameraIntrinsics: focal lengths must be > 0");
    if (width > 0 && !(cx >= 0.0 && cx <= width - 1))
      throw std::invalid_argument("CameraIntrinsics: cx outside image");
    if (height > 0 && !(cy >= 0.0 && cy <= height - 1))
      throw std::invalid_argument("CameraIntrinsics: cy outside image");
  }

  // Intrinsics of the 2x2 box-downsampled image under the pixel-center
  // convention: fine coordinate u maps to coarse (u - 0.5) / 2.
  CameraIntrinsics halved() const {
    return {fx / 2.0, fy / 2.0, (cx - 0.5) / 2.0, (cy - 0.5) / 2.0};
  }

  Vec3 ray(double x, double y) const {
    return {(x - cx) / fx, (y - cy) / fy, 1.0};
  }
};

// Rigid transform X' = R(rotation) * X + translation with axis-angle rotation
// (canonical chart, |rotation| < pi).
struct PoseSE3 {
  Vec3 rotation{0, 0, 0};     // axis-angle, radians
  Vec3 translation{0, 0, 0};  // meters

  Mat3 rotation_matrix() const {
    const double phi = m3::norm(rotation);
    const Mat3 k = m3::skew(rotation);
    const Mat3 k2 = m3::mul(k, k);
    double c1, c2;  // sin(phi)/phi, (1-cos(phi))/phi^2
    if (phi < 1e-6) {
      c1 = 1.0 - phi * phi / 6.0;
      c2 = 0.5 - phi * phi / 24.0;
    } else {
      c1 = std::sin(phi) / phi;
      c2 = (1.0 - std::cos(phi)) / (phi * phi);
    }
    return m3::add(m3::add(m3::identity(), k, c1), k2, c2);
  }

  // Left Jacobian of SO(3): d exp([w + dw]) = exp([J_l dw]) exp([w]).
  Mat3 left_jacobian() const {
    const double phi = m3::norm(rotation);
    const Mat3 k = m3::skew(rotation);
    const Mat3 k2 = m3::mul(k, k);
    double c1, c2;  // (1-cos)/phi^2, (phi-sin)/phi^3
    if (phi < 1e-6) {
      c1 = 0.5 - phi * phi / 24.0;
      c2 = 1.0 / 6.0 - phi * phi / 120.0;
    } else {
      c1 = (1.0 - std::cos(phi)) / (phi * phi);
      c2 = (phi - std::sin(phi)) / (phi * phi * phi);
    }
    return m3::add(m3::add(m3::identity(), k, c1), k2, c2);
  }

  Vec3 apply(const Vec3& x) const {
    const Vec3 rx = m3::mul(rotation_matrix(), x);
    return {rx[0] + translation[0], rx[1] + translation[1], rx[2] + translation[2]};
  }
};

// Axis-angle from a rotation matrix (|angle| <= pi).
inline Vec3 axis_angle_from_matrix(const Mat3& r) {
  const double tr = r[0] + r[4] + r[8];
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  const double phi = std::acos(c);
  Vec3 w{r[7] - r[5], r[2] - r[6], r[3] - r[1]};
  if (phi < 1e-9) {
    return {0.5 * w[0], 0.5 * w[1], 0.5 * w[2]};
  }
  if (phi > M_PI - 1e-6) {
    // Near pi: recover axis from the symmetric part.
    Vec3 axis{std::sqrt(std::max(0.0, (r[0] + 1.0) / 2.0)),
              std::sqrt(std::max(0.0, (r[4] + 1.0) / 2.0)),
              std::sqrt(std::max(0.0, (r[8] + 1.0) / 2.0))};
    int mi = axis[0] >= axis[1] && axis[0] >= axis[2] ? 0 : (axis[1] >= axis[2] ? 1 : 2);
    if (mi == 0) {
      if (r[1] + r[3] < 0) axis[1] = -axis[1];
      if (r[2] + r[6] < 0) axis[2] = -axis[2];
    } else if (mi == 1) {
      if (r[1] + r[3] < 0) axis[0] = -axis[0];
      if (r[5] + r[7] < 0) axis[2] = -axis[2];
    } else {
      if (r[2] + r[6] < 0) axis[0] = -axis[0];
      if (r[5] + r[7] < 0) axis[1] = -axis[1];
    }
    const double n = m3::norm(axis);
    return {phi * axis[0] / n, phi * axis[1] / n, phi * axis[2] / n};
  }
  const double s = phi / (2.0 * std::sin(phi));
  return {s * w[0], s * w[1], s * w[2]};
}

inline PoseSE3 pose_from_matrix(const Mat3& r, const Vec3& t) {
  return {axis_angle_from_matrix(r), t};
}

// b after a: X -> R_b (R_a X + t_a) + t_b.
inline PoseSE3 compose(const PoseSE3& b, const PoseSE3& a) {
  const Vec3 t = b.apply(a.translation);
  return pose_from_matrix(m3::mul(b.rotation_matrix(), a.rotation_matrix()), t);
}

inline PoseSE3 inverse(const PoseSE3& p) {
  const Mat3 rt = m3::transpose(p.rotation_matrix());
  const Vec3 t = m3::mul(rt, p.translation);
  return {{-p.rotation[0], -p.rotation[1], -p.rotation[2]},
          {-t[0], -t[1], -t[2]}};
}

// Warped image plus validity and the continuous source coordinates that
// produced it. valid == 0 where coordinates fall outside
// [0, w-1] x [0, h-1] or the transformed depth is <= 1e-6.
struct WarpResult {
  ImageF warped;
  ImageF valid;          // 1xhxw in {0,1}
  ImageF sample_coords;  // 2xhxw: channel 0 = x, channel 1 = y
};

struct ReprojectResult {
  ImageF coords;       // 2xhxw continuous source coordinates
  ImageF source_depth; // 1xhxw depth after the rigid transform
  ImageF valid;        // 1xhxw, 0 where transformed depth <= 1e-6
};

constexpr double kMinProjectedDepth = 1e-6;

// Back-project each target pixel with its depth, apply the pose, project.
inline ReprojectResult reproject(const ImageF& depth, const PoseSE3& pose,
                                 const CameraIntrinsics& K) {
  if (depth.channels != 1) throw std::invalid_argument("reproject: depth must be 1-channel");
  K.validate();
  const Mat3 r = pose.rotation_matrix();
  ReprojectResult out;
  out.coords = ImageF(2, depth.height, depth.width, 0.0);
  out.source_depth = ImageF(1, depth.height, depth.width, 0.0);
  out.valid = ImageF(1, depth.height, depth.width, 0.0);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const Vec3 ray = K.ray(x, y);
      const double d = depth.at(0, y, x);
      const Vec3 p = m3::mul(r, Vec3{d * ray[0], d * ray[1], d * ray[2]});
      const double px = p[0] + pose.translation[0];
      const double py = p[1] + pose.translation[1];
      const double pz = p[2] + pose.translation[2];
      out.source_depth.at(0, y, x) = pz;
      if (pz <= kMinProjectedDepth) continue;
      out.coords.at(0, y, x) = K.fx * px / pz + K.cx;
      out.coords.at(1, y, x) = K.fy * py / pz + K.cy;
      out.valid.at(0, y, x) = 1.0;
    }
  return out;
}

// Vector-Jacobian product through reproject. Accumulates into g_log_depth and
// g_pose (rotation xyz, translation xyz). Pixels invalid in `valid` are
// skipped.
inline void reproject_backward(const ImageF& depth, const PoseSE3& pose,
                               const CameraIntrinsics& K, const ImageF& g_coords,
                               const ImageF& valid, ImageF* g_log_depth,
                               std::array<double, 6>* g_pose,
                               const ImageF* g_source_depth = nullptr) {
  const Mat3 r = pose.rotation_matrix();
  const Mat3 jl = pose.left_jacobian();
  const Mat3 jlt = m3::transpose(jl);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      if (valid.at(0, y, x) == 0.0) continue;
      const Vec3 ray = K.ray(x, y);
      const double d = depth.at(0, y, x);
      const Vec3 rx = m3::mul(r, Vec3{d * ray[0], d * ray[1], d * ray[2]});
      const double px = rx[0] + pose.translation[0];
      const double py = rx[1] + pose.translation[1];
      const double pz = rx[2] + pose.translation[2];
      const double gu = g_coords.at(0, y, x);
      const double gv = g_coords.at(1, y, x);
      const double gw = g_source_depth ? g_source_depth->at(0, y, x) : 0.0;
      // d(coords)/d(camera point)
      Vec3 gp{K.fx / pz * gu,
              K.fy / pz * gv,
              (-K.fx * px / (pz * pz)) * gu + (-K.fy * py / (pz * pz)) * gv + gw};
      if (g_log_depth) {
        const Vec3 rray = m3::mul(r, ray);
        g_log_depth->at(0, y, x) += d * m3::dot(gp, rray);
      }
      if (g_pose) {
        // rotation: d(R X)/dw = -[R X]x J_l  =>  g_w += J_l^T (RX x gp)
        const Vec3 c = m3::cross(rx, gp);
        const Vec3 gwv = m3::mul(jlt, c);
        (*g_pose)[0] += gwv[0];
        (*g_pose)[1] += gwv[1];
        (*g_pose)[2] += gwv[2];
        (*g_pose)[3] += gp[0];
        (*g_pose)[4] += gp[1];
        (*g_pose)[5] += gp[2];
      }
    }
}

// 4-neighbor bilinear interpolation, clamp-to-edge for values; validity marks
// in-bounds coordinates so callers can exclude border samples from losses.
inline WarpResult bilinear_sample(const ImageF& source, const ImageF& coords) {
  if (coords.channels != 2)
    throw std::invalid_argument("bilinear_sample: coords must be 2-channel");
  const int h = coords.height, w = coords.width;
  WarpResult out;
  out.warped = ImageF(source.channels, h, w, 0.0);
  out.valid = ImageF(1, h, w, 0.0);
  out.sample_coords = coords;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = coords.at(0, y, x);
      const double v = coords.at(1, y, x);
      const bool inb = std::isfinite(u) && std::isfinite(v) && u >= 0.0 &&
                       v >= 0.0 && u <= source.width - 1.0 && v <= source.height - 1.0;
      out.valid.at(0, y, x) = inb ? 1.0 : 0.0;
      const double uc = std::clamp(u, 0.0, static_cast<double>(source.width - 1));
      const double vc = std::clamp(v, 0.0, static_cast<double>(source.height - 1));
      const int x0 = static_cast<int>(std::floor(uc));
      const int y0 = static_cast<int>(std::floor(vc));
      const int x1 = std::min(x0 + 1, source.width - 1);
      const int y1 = std::min(y0 + 1, source.height - 1);
      const double fu = uc - x0, fv = vc - y0;
      for (int c = 0; c < source.channels; ++c) {
        const double top = (1 - fu) * source.at(c, y0, x0) + fu * source.at(c, y0, x1);
        const double bot = (1 - fu) * source.at(c, y1, x0) + fu * source.at(c, y1, x1);
        out.warped.at(c, y, x) = (1 - fv) * top + fv * bot;
      }
    }
  return out;
}

// VJP through bilinear_sample. Invalid pixels contribute nothing. g_source is
// a scatter into the source image; g_coords receives the interpolation
// derivative w.r.t. the continuous coordinates.
inline void bilinear_sample_backward(const ImageF& source, const ImageF& coords,
                                     const ImageF& valid, const ImageF& upstream,
                                     ImageF* g_source, ImageF* g_coords) {
  const int h = coords.height, w = coords.width;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (valid.at(0, y, x) == 0.0) continue;
      const double u = std::clamp(coords.at(0, y, x), 0.0, static_cast<double>(source.width - 1));
      const double v = std::clamp(coords.at(1, y, x), 0.0, static_cast<double>(source.height - 1));
      const int x0 = static_cast<int>(std::floor(u));
      const int y0 = static_cast<int>(std::floor(v));
      const int x1 = std::min(x0 + 1, source.width - 1);
      const int y1 = std::min(y0 + 1, source.height - 1);
      const double fu = u - x0, fv = v - y0;
      double du = 0.0, dv = 0.0;
      for (int c = 0; c < source.channels; ++c) {
        const double up = upstream.at(c, y, x);
        if (g_source) {
          g_source->at(c, y0, x0) += up * (1 - fu) * (1 - fv);
          g_source->at(c, y0, x1) += up * fu * (1 - fv);
          g_source->at(c, y1, x0) += up * (1 - fu) * fv;
          g_source->at(c, y1, x1) += up * fu * fv;
        }
        const double s00 = source.at(c, y0, x0), s01 = source.at(c, y0, x1);
        const double s10 = source.at(c, y1, x0), s11 = source.at(c, y1, x1);
        du += up * ((s01 - s00) * (1 - fv) + (s11 - s10) * fv);
        dv += up * ((s10 - s00) * (1 - fu) + (s11 - s01) * fu);
      }
      if (g_coords) {
        g_coords->at(0, y, x) += du;
        g_coords->at(1, y, x) += dv;
      }
    }
}

// Inverse warping of a source frame onto the target grid.
inline WarpResult warp_frame(const ImageF& source, const ImageF& depth,
                             const PoseSE3& pose, const CameraIntrinsics& K) {
  const ReprojectResult rp = reproject(depth, pose, K);
  WarpResult out = bilinear_sample(source, rp.coords);
  for (long i = 0; i < out.valid.size(); ++i)
    out.valid.data[i] = (out.valid.data[i] != 0.0 && rp.valid.data[i] != 0.0) ? 1.0 : 0.0;
  return out;
}

// VJP through warp_frame for an upstream gradient on the warped image.
inline void warp_backward(const ImageF& source, const ImageF& depth,
                          const PoseSE3& pose, const CameraIntrinsics& K,
                          const WarpResult& warp, const ImageF& upstream,
                          ImageF* g_log_depth, std::array<double, 6>* g_pose,
                          ImageF* g_source) {
  ImageF g_coords(2, depth.height, depth.width, 0.0);
  bilinear_sample_backward(source, warp.sample_coords, warp.valid, upstream,
                           g_source, &g_coords);
  reproject_backward(depth, pose, K, g_coords, warp.valid, g_log_depth, g_pose);
}

// A short temporal window of frames sharing one camera. The optimized target
// is the middle frame.
struct FrameSequence {
  std::vector<ImageF> frames;
  int window = 1;
  CameraIntrinsics intrinsics;

  int target_index() const { return static_cast<int>(frames.size()) / 2; }

  void validate() const {
    if (window < 1) throw std::invalid_argument("FrameSequence: window must be >= 1");
    if (2 * window + 1 > static_cast<int>(frames.size()))
      throw std::invalid_argument("FrameSequence: needs at least 2*window+1 frames");
    for (const auto& f : frames)
      if (!f.same_shape(frames.front()))
        throw std::invalid_argument("FrameSequence: frames differ in shape");
    intrinsics.validate(frames.front().width, frames.front().height);
  }
};

}  // namespace hazesfm

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pmsfm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Similarity transform x -> scale * rotation * x + translation.
///
/// A rigid transform is the special case scale == 1. Camera poses are stored
/// camera-to-world; use inverse() to obtain the world-to-camera map.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  static RigidTransform Identity() { return {}; }

  Vec3 operator()(const Vec3& x) const { return scale * (rotation * x) + translation; }

  RigidTransform inverse() const;
  Eigen::Matrix4d matrix() const;
};

/// (a ∘ b)(x) == a(b(x)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

/// Pinhole intrinsics with zero skew. Pixel (0, 0) is the center of the
/// top-left pixel.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Vec2 project(const Vec3& camera_point) const {
    return {fx * camera_point.x() / camera_point.z() + cx,
            fy * camera_point.y() / camera_point.z() + cy};
  }
  /// Ray direction (z = 1) through pixel (u, v).
  Vec3 unproject(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }
};

/// Dense H x W grid of 3D points with a validity mask, stored row-major.
/// Invalid entries hold NaN.
class Pointmap {
 public:
  Pointmap() = default;
  Pointmap(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return points_.size(); }
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width_ + u; }

  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  bool valid(std::size_t i) const { return valid_[i] != 0; }

  void set(std::size_t i, const Vec3& p) {
    points_[i] = p;
    valid_[i] = 1;
  }
  void invalidate(std::size_t i);

  std::size_t valid_count() const;
  bool same_shape(const Pointmap& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  std::span<const Vec3> points() const { return points_; }
  std::span<const std::uint8_t> mask() const { return valid_; }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<Vec3> points_;
  std::vector<std::uint8_t> valid_;
};

/// Per-pixel confidence, every value >= 1 so that log-confidence is a
/// non-negative weight.
class ConfidenceMap {
 public:
  ConfidenceMap() = default;
  ConfidenceMap(int height, int width, double fill = 1.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  std::span<const double> values() const { return values_; }

  bool same_shape(const Pointmap& p) const {
    return height_ == p.height() && width_ == p.width();
  }
  bool same_shape(const ConfidenceMap& c) const {
    return height_ == c.height_ && width_ == c.width_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

/// Applies t to every valid point; invalid entries are left untouched.
Pointmap apply(const RigidTransform& t, const Pointmap& p);

enum class AlignMode { kRigid, kSimilarity };

/// Weighted Umeyama alignment. Returns T minimizing
/// sum_p w_p * |T(src_p) - dst_p|^2. In similarity mode the scale is the
/// least-squares Umeyama scale, otherwise it is fixed at 1. The rotation is
/// always proper (det = +1).
///
/// Throws DegenerateInput when fewer than 3 weights are positive or when the
/// weighted, centered source covariance has rank < 2.
RigidTransform weighted_procrustes(std::span<const Vec3> src, std::span<const Vec3> dst,
                                   std::span<const double> weights, AlignMode mode);

/// Unweighted convenience overload.
RigidTransform procrustes(std::span<const Vec3> src, std::span<const Vec3> dst, AlignMode mode);

/// Projects an arbitrary 3x3 matrix onto SO(3) (closest rotation in the
/// Frobenius sense).
Mat3 nearest_rotation(const Mat3& m);

}  // namespace pmsfm

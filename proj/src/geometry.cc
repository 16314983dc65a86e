#include "pmsfm/geometry.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "pmsfm/errors.h"

namespace pmsfm {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.scale = 1.0 / scale;
  inv.translation = -inv.scale * (inv.rotation * translation);
  return inv;
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = scale * rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.scale = a.scale * b.scale;
  out.translation = a.scale * (a.rotation * b.translation) + a.translation;
  return out;
}

Pointmap::Pointmap(int height, int width)
    : height_(height),
      width_(width),
      points_(static_cast<std::size_t>(height) * width, Vec3::Constant(kNaN)),
      valid_(static_cast<std::size_t>(height) * width, 0) {
  if (height <= 0 || width <= 0) throw InvalidArgument("pointmap dimensions must be positive");
}

void Pointmap::invalidate(std::size_t i) {
  points_[i] = Vec3::Constant(kNaN);
  valid_[i] = 0;
}

std::size_t Pointmap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), 1));
}

ConfidenceMap::ConfidenceMap(int height, int width, double fill)
    : height_(height), width_(width), values_(static_cast<std::size_t>(height) * width, fill) {
  if (height <= 0 || width <= 0) throw InvalidArgument("confidence dimensions must be positive");
}

Pointmap apply(const RigidTransform& t, const Pointmap& p) {
  Pointmap out = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.valid(i)) out.set(i, t(p[i]));
  }
  return out;
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s(2, 2) = -1.0;
  return svd.matrixU() * s * svd.matrixV().transpose();
}

RigidTransform weighted_procrustes(std::span<const Vec3> src, std::span<const Vec3> dst,
                                   std::span<const double> weights, AlignMode mode) {
  if (src.size() != dst.size() || src.size() != weights.size()) {
    throw ShapeMismatch("procrustes: src, dst and weights must have equal length");
  }
  double total = 0.0;
  std::size_t positive = 0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw InvalidArgument("procrustes: weights must be finite and >= 0");
    if (w > 0.0) {
      total += w;
      ++positive;
    }
  }
  if (positive < 3) throw DegenerateInput("procrustes: fewer than 3 positive weights");

  Vec3 mu_src = Vec3::Zero();
  Vec3 mu_dst = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (weights[i] == 0.0) continue;
    mu_src += weights[i] * src[i];
    mu_dst += weights[i] * dst[i];
  }
  mu_src /= total;
  mu_dst /= total;

  Mat3 cross = Mat3::Zero();
  Mat3 src_cov = Mat3::Zero();
  double src_var = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const Vec3 a = src[i] - mu_src;
    const Vec3 b = dst[i] - mu_dst;
    cross += weights[i] * b * a.transpose();
    src_cov += weights[i] * a * a.transpose();
    src_var += weights[i] * a.squaredNorm();
  }
  cross /= total;
  src_cov /= total;
  src_var /= total;

  // Rank test on the source spread: collinear or coincident support leaves
  // the rotation about the line undetermined.
  const Eigen::Vector3d spread = Eigen::JacobiSVD<Mat3>(src_cov).singularValues();
  if (!(spread(0) > 0.0) || spread(1) <= 1e-12 * spread(0)) {
    throw DegenerateInput("procrustes: source points are collinear or coincident");
  }

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Eigen::Vector3d signs(1.0, 1.0, 1.0);
  if (u.determinant() * v.determinant() < 0.0) signs(2) = -1.0;

  RigidTransform out;
  out.rotation = u * signs.asDiagonal() * v.transpose();
  if (mode == AlignMode::kSimilarity) {
    out.scale = svd.singularValues().dot(signs) / src_var;
    if (!(out.scale > 0.0)) throw DegenerateInput("procrustes: non-positive similarity scale");
  }
  out.translation = mu_dst - out.scale * (out.rotation * mu_src);
  return out;
}

RigidTransform procrustes(std::span<const Vec3> src, std::span<const Vec3> dst, AlignMode mode) {
  const std::vector<double> ones(src.size(), 1.0);
  return weighted_procrustes(src, dst, ones, mode);
}

}  // namespace pmsfm

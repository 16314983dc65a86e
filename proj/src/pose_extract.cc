#include "pmsfm/pose_extract.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "pmsfm/errors.h"
#include "pmsfm/seed.h"

namespace pmsfm {

namespace {

using Mat34 = Eigen::Matrix<double, 3, 4>;
using Solver = std::function<std::optional<Mat34>(std::span<const Vec2>, std::span<const Vec3>)>;

constexpr int kFocalIterations = 10;
constexpr int kSampleSize = 6;
constexpr double kRansacConfidence = 0.9999;

// Similarity that moves the centroid to the origin and scales the mean
// distance to sqrt(dim).
template <int Dim>
Eigen::Matrix<double, Dim + 1, Dim + 1> normalizer(std::span<const Eigen::Matrix<double, Dim, 1>> pts) {
  Eigen::Matrix<double, Dim, 1> c = Eigen::Matrix<double, Dim, 1>::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double d = 0.0;
  for (const auto& p : pts) d += (p - c).norm();
  d /= static_cast<double>(pts.size());
  const double s = d > 0.0 ? std::sqrt(static_cast<double>(Dim)) / d : 1.0;
  Eigen::Matrix<double, Dim + 1, Dim + 1> t = Eigen::Matrix<double, Dim + 1, Dim + 1>::Identity();
  t.template topLeftCorner<Dim, Dim>() *= s;
  t.template topRightCorner<Dim, 1>() = -s * c;
  return t;
}

// Null vector of the DLT system for image points already in the normalized
// frame; returns P with x ~ P X for homogeneous X (also normalized).
std::optional<Mat34> solve_dlt(std::span<const Vec2> x, const std::vector<Eigen::Vector4d>& xw) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVector4d w = xw[i].transpose();
    a.block<1, 4>(2 * i, 0) = w;
    a.block<1, 4>(2 * i, 8) = -x[i].x() * w;
    a.block<1, 4>(2 * i + 1, 4) = w;
    a.block<1, 4>(2 * i + 1, 8) = -x[i].y() * w;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  // A rank-deficient system beyond the null vector means a degenerate sample.
  if (sv(10) <= 1e-10 * sv(0)) return std::nullopt;
  const Eigen::VectorXd v = svd.matrixV().col(11);
  Mat34 p;
  p.row(0) = v.segment<4>(0).transpose();
  p.row(1) = v.segment<4>(4).transpose();
  p.row(2) = v.segment<4>(8).transpose();
  return p;
}

// Flips the projective sign so that most points lie in front of the camera.
void fix_depth_sign(Mat34& p, std::span<const Vec3> world) {
  int positive = 0;
  for (const auto& x : world) positive += (p.row(2).head<3>().dot(x) + p(2, 3)) > 0.0 ? 1 : -1;
  if (positive < 0) p = -p;
}

std::vector<Eigen::Vector4d> homogeneous(std::span<const Vec3> world, const Eigen::Matrix4d& t) {
  std::vector<Eigen::Vector4d> out;
  out.reserve(world.size());
  for (const auto& x : world) out.push_back(t * x.homogeneous());
  return out;
}

double reprojection_error(const Mat34& p, const Vec2& pixel, const Vec3& world) {
  const Vec3 h = p * world.homogeneous();
  if (!(h.z() > 0.0)) return std::numeric_limits<double>::infinity();
  return (h.hnormalized() - pixel).norm();
}

Mat34 projection(const Intrinsics& k, const RigidTransform& world_to_cam) {
  Mat3 km;
  km << k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0;
  Mat34 rt;
  rt.leftCols<3>() = world_to_cam.rotation;
  rt.col(3) = world_to_cam.translation;
  return km * rt;
}

struct RansacResult {
  Mat34 model;
  std::vector<std::size_t> inliers;
};

std::vector<std::size_t> inliers_of(const Mat34& p, std::span<const Vec2> pixels, std::span<const Vec3> world,
                                    double threshold) {
  std::vector<std::size_t> in;
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    if (reprojection_error(p, pixels[k], world[k]) < threshold) in.push_back(k);
  }
  return in;
}

std::optional<RansacResult> ransac(std::span<const Vec2> pixels, std::span<const Vec3> world, double threshold,
                                   int max_iterations, std::uint64_t seed, const Solver& solve) {
  if (pixels.size() < kSampleSize) return std::nullopt;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pixels.size() - 1);
  std::optional<RansacResult> best;
  std::array<std::size_t, kSampleSize> idx;
  std::vector<Vec2> sp(kSampleSize);
  std::vector<Vec3> sw(kSampleSize);
  double needed = max_iterations;
  for (int it = 0; it < max_iterations && it < needed; ++it) {
    for (int s = 0; s < kSampleSize; ++s) {
      do {
        idx[s] = pick(rng);
      } while (std::find(idx.begin(), idx.begin() + s, idx[s]) != idx.begin() + s);
      sp[s] = pixels[idx[s]];
      sw[s] = world[idx[s]];
    }
    const auto model = solve(sp, sw);
    if (!model) continue;
    auto in = inliers_of(*model, pixels, world, threshold);
    if (!best || in.size() > best->inliers.size()) {
      best = RansacResult{*model, std::move(in)};
      const double ratio = static_cast<double>(best->inliers.size()) / static_cast<double>(pixels.size());
      const double miss = 1.0 - std::pow(ratio, kSampleSize);
      if (miss <= 0.0) {
        needed = 0.0;
      } else if (miss < 1.0) {
        needed = std::log(1.0 - kRansacConfidence) / std::log(miss);
      }
    }
  }
  if (!best || best->inliers.size() < kSampleSize) return best;

  std::vector<Vec2> ip;
  std::vector<Vec3> iw;
  for (std::size_t k : best->inliers) {
    ip.push_back(pixels[k]);
    iw.push_back(world[k]);
  }
  if (const auto refit = solve(ip, iw)) {
    best->model = *refit;
    best->inliers = inliers_of(*refit, pixels, world, threshold);
  }
  return best;
}

Vec2 pixel_of(std::size_t index, int width) {
  return {static_cast<double>(index % static_cast<std::size_t>(width)),
          static_cast<double>(index / static_cast<std::size_t>(width))};
}

double diagonal(const Pointmap& pm) { return std::hypot(pm.width(), pm.height()); }

Intrinsics centered(const Pointmap& pm, double focal) {
  return {focal, focal, 0.5 * pm.width(), 0.5 * pm.height()};
}

std::optional<Mat34> calibrated_model(const Intrinsics& k, std::span<const Vec2> px, std::span<const Vec3> w) {
  const auto t = calibrated_dlt(px, w, k);
  if (!t) return std::nullopt;
  return projection(k, *t);
}

}  // namespace

double estimate_focal(const Pointmap& camera_points, std::span<const std::uint8_t> valid,
                      std::optional<Vec2> principal) {
  if (!valid.empty() && valid.size() != camera_points.size()) throw ShapeMismatch("mask size differs from pointmap");
  const Vec2 c = principal.value_or(Vec2(0.5 * camera_points.width(), 0.5 * camera_points.height()));
  std::vector<Vec2> a, b;
  bool any_valid = false;
  for (std::size_t p = 0; p < camera_points.size(); ++p) {
    if (!camera_points.valid(p) || (!valid.empty() && !valid[p])) continue;
    any_valid = true;
    const Vec3& x = camera_points[p];
    if (!(x.z() > 0.0)) continue;
    a.push_back(pixel_of(p, camera_points.width()) - c);
    b.push_back(x.head<2>() / x.z());
  }
  if (any_valid && a.empty()) throw NoPositiveDepth("no valid point in front of the camera");
  if (a.size() < 10) throw InsufficientPoints("focal estimation needs at least 10 points");

  std::vector<double> ratios;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (b[k].norm() > 1e-12) ratios.push_back(a[k].norm() / b[k].norm());
  }
  if (ratios.empty()) throw InsufficientPoints("every point lies on the optical axis");
  auto mid = ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2);
  std::nth_element(ratios.begin(), mid, ratios.end());
  double f = *mid;

  const double eps = 1e-9 * std::max(1.0, f);
  for (int it = 0; it < kFocalIterations; ++it) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double w = 1.0 / std::max((a[k] - f * b[k]).norm(), eps);
      num += w * a[k].dot(b[k]);
      den += w * b[k].squaredNorm();
    }
    if (den <= 0.0) break;
    f = num / den;
  }
  return f;
}

std::vector<std::size_t> select_confident(const Pointmap& points, const ConfidenceMap& conf, const PnPConfig& cfg) {
  if (!conf.same_shape(points)) throw ShapeMismatch("confidence and pointmap differ in shape");
  std::vector<std::size_t> out;
  std::vector<double> values;
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (!points.valid(p)) continue;
    values.push_back(conf[p]);
    if (conf[p] > cfg.conf_threshold) out.push_back(p);
  }
  if (!out.empty() || values.empty()) return out;
  auto q = values.begin() + static_cast<std::ptrdiff_t>(cfg.fallback_quantile * static_cast<double>(values.size() - 1));
  std::nth_element(values.begin(), q, values.end());
  const double cut = *q;
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (points.valid(p) && conf[p] >= cut) out.push_back(p);
  }
  return out;
}

std::optional<RigidTransform> calibrated_dlt(std::span<const Vec2> pixels, std::span<const Vec3> world,
                                             const Intrinsics& k) {
  if (pixels.size() != world.size()) throw ShapeMismatch("pixel and point counts differ");
  if (pixels.size() < kSampleSize) return std::nullopt;
  std::vector<Vec2> x;
  x.reserve(pixels.size());
  for (const auto& px : pixels) x.push_back({(px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy});
  const Eigen::Matrix4d t3 = normalizer<3>(world);
  const auto sol = solve_dlt(x, homogeneous(world, t3));
  if (!sol) return std::nullopt;
  Mat34 p = *sol * t3;
  fix_depth_sign(p, world);

  Eigen::JacobiSVD<Mat3> svd(p.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) return std::nullopt;
  // Translation re-solved linearly for the orthonormalized rotation:
  // x_hat x (R X + t) = 0 for every correspondence.
  Mat3 ata = Mat3::Zero();
  Vec3 atb = Vec3::Zero();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const Vec3 xh = x[k].homogeneous().normalized();
    Mat3 cross;
    cross << 0.0, -xh.z(), xh.y(), xh.z(), 0.0, -xh.x(), -xh.y(), xh.x(), 0.0;
    ata += cross.transpose() * cross;
    atb -= cross.transpose() * (cross * (r * world[k]));
  }
  RigidTransform out;
  out.rotation = r;
  out.translation = ata.ldlt().solve(atb);
  return out;
}

std::optional<Eigen::Matrix<double, 3, 4>> projective_dlt(std::span<const Vec2> pixels, std::span<const Vec3> world) {
  if (pixels.size() != world.size()) throw ShapeMismatch("pixel and point counts differ");
  if (pixels.size() < kSampleSize) return std::nullopt;
  const Eigen::Matrix3d t2 = normalizer<2>(pixels);
  const Eigen::Matrix4d t3 = normalizer<3>(world);
  std::vector<Vec2> x;
  x.reserve(pixels.size());
  for (const auto& px : pixels) x.push_back((t2 * px.homogeneous()).hnormalized());
  const auto sol = solve_dlt(x, homogeneous(world, t3));
  if (!sol) return std::nullopt;
  Mat34 p = t2.inverse() * *sol * t3;
  fix_depth_sign(p, world);
  return p;
}

RigidTransform decompose_projection(const Eigen::Matrix<double, 3, 4>& p) {
  const Mat3 m = p.leftCols<3>();
  Mat3 j = Mat3::Zero();
  j(0, 2) = j(1, 1) = j(2, 0) = 1.0;
  Eigen::HouseholderQR<Mat3> qr((j * m).transpose());
  const Mat3 q = qr.householderQ();
  const Mat3 u = qr.matrixQR().triangularView<Eigen::Upper>();
  Mat3 k = j * u.transpose() * j;
  Mat3 r = j * q.transpose();
  const Mat3 d = k.diagonal().cwiseSign().asDiagonal();
  k = k * d;
  r = d * r;
  if (r.determinant() < 0.0) r = -r;

  RigidTransform cam_to_world;
  cam_to_world.rotation = r.transpose();
  cam_to_world.translation = -m.inverse() * p.col(3);
  return cam_to_world;
}

PoseEstimate extract_pose(const Pointmap& points, const ConfidenceMap& conf, const Intrinsics& k,
                          const PnPConfig& cfg) {
  PoseEstimate out;
  out.focal = k.fx;
  const auto sel = select_confident(points, conf, cfg);
  std::vector<Vec2> px;
  std::vector<Vec3> w;
  for (std::size_t p : sel) {
    px.push_back(pixel_of(p, points.width()));
    w.push_back(points[p]);
  }
  const Solver solve = [&](std::span<const Vec2> a, std::span<const Vec3> b) { return calibrated_model(k, a, b); };
  const auto res = ransac(px, w, cfg.inlier_fraction * diagonal(points), cfg.ransac_iterations, cfg.seed, solve);
  if (!res) return out;

  // Recover [R|t] from K [R|t].
  Mat3 km;
  km << k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0;
  const Mat34 rt = km.inverse() * res->model;
  RigidTransform world_to_cam;
  world_to_cam.rotation = rt.leftCols<3>();
  world_to_cam.translation = rt.col(3);
  out.pose = world_to_cam.inverse();
  out.inliers = static_cast<int>(res->inliers.size());
  out.registered = out.inliers >= cfg.min_inliers;
  return out;
}

PoseExtraction extract_all(const Reconstruction& recon, const PnPConfig& cfg) {
  PoseExtraction out;
  out.poses.resize(recon.size());
  int registered = 0;
  for (int i = 0; i < recon.size(); ++i) {
    if (!recon.registered[i]) continue;
    const Pointmap& pm = recon.points[i];
    const ConfidenceMap& conf = recon.confidence[i];
    PnPConfig image_cfg = cfg;
    image_cfg.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(i)});
    try {
      const auto sel = select_confident(pm, conf, image_cfg);
      std::vector<std::uint8_t> mask(pm.size(), 0);
      std::vector<Vec2> px;
      std::vector<Vec3> w;
      for (std::size_t p : sel) {
        mask[p] = 1;
        px.push_back(pixel_of(p, pm.width()));
        w.push_back(pm[p]);
      }
      const Solver solve = [](std::span<const Vec2> a, std::span<const Vec3> b) { return projective_dlt(a, b); };
      const auto init = ransac(px, w, cfg.inlier_fraction * diagonal(pm), cfg.ransac_iterations,
                               derive_seed(image_cfg.seed, {1}), solve);
      if (!init) continue;

      RigidTransform cam_to_world = decompose_projection(init->model);
      PoseEstimate est;
      for (int pass = 0; pass < 2; ++pass) {
        const double f = estimate_focal(apply(cam_to_world.inverse(), pm), mask);
        est = extract_pose(pm, conf, centered(pm, f), image_cfg);
        est.focal = f;
        if (!est.registered) break;
        cam_to_world = est.pose;
      }
      out.poses[i] = est;
      registered += est.registered ? 1 : 0;
    } catch (const InsufficientPoints&) {
    } catch (const NoPositiveDepth&) {
    }
  }
  out.registration_rate = recon.size() > 0 ? 100.0 * registered / recon.size() : 0.0;
  return out;
}

}  // namespace pmsfm

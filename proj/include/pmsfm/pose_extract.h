#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pmsfm/accumulate.h"
#include "pmsfm/geometry.h"

namespace pmsfm {

struct PnPConfig {
  double conf_threshold = 3.0;
  double fallback_quantile = 0.9;
  int ransac_iterations = 512;
  /// Inlier reprojection threshold as a fraction of the image diagonal.
  double inlier_fraction = 0.01;
  int min_inliers = 12;
  std::uint64_t seed = 0;
};

/// Robust focal length (pixels) of a pointmap expressed in its own camera
/// frame, via Weiszfeld iterations on sum_p |(u - cx, v - cy) - f (x/z, y/z)|.
/// The principal point defaults to (W/2, H/2). `valid` may be empty to use
/// every valid pixel.
///
/// Throws InsufficientPoints with fewer than 10 usable pixels and
/// NoPositiveDepth when no valid point lies in front of the camera.
double estimate_focal(const Pointmap& camera_points, std::span<const std::uint8_t> valid = {},
                      std::optional<Vec2> principal = std::nullopt);

/// Pixels with conf > threshold, or conf >= the fallback quantile when none
/// pass. Only valid pointmap pixels are considered.
std::vector<std::size_t> select_confident(const Pointmap& points, const ConfidenceMap& conf, const PnPConfig& cfg);

struct PoseEstimate {
  RigidTransform pose;  // camera-to-world
  double focal = 0.0;
  int inliers = 0;
  bool registered = false;
};

/// Minimal-sample DLT: world-to-camera [R|t] from >= 6 correspondences between
/// pixels and world points under known intrinsics. Returns nullopt when the
/// system is degenerate.
std::optional<RigidTransform> calibrated_dlt(std::span<const Vec2> pixels, std::span<const Vec3> world,
                                             const Intrinsics& k);

/// Uncalibrated DLT: 3x4 projection matrix P ~ K [R | t] from >= 6
/// correspondences.
std::optional<Eigen::Matrix<double, 3, 4>> projective_dlt(std::span<const Vec2> pixels, std::span<const Vec3> world);

/// RQ decomposition of the left 3x3 block of P into K R with positive focal
/// lengths; returns the camera-to-world pose.
RigidTransform decompose_projection(const Eigen::Matrix<double, 3, 4>& p);

/// RANSAC-PnP on one global pointmap. Failure is reported via registered.
PoseEstimate extract_pose(const Pointmap& points, const ConfidenceMap& conf, const Intrinsics& k,
                          const PnPConfig& cfg);

struct PoseExtraction {
  std::vector<PoseEstimate> poses;
  double registration_rate = 0.0;  // percent
};

/// Focal estimation and pose extraction for every registered image, with one
/// re-estimation pass of the focal on the re-centered pointmap.
PoseExtraction extract_all(const Reconstruction& recon, const PnPConfig& cfg);

}  // namespace pmsfm

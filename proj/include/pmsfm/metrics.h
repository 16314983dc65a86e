#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "pmsfm/geometry.h"

namespace pmsfm {

/// Camera-to-world poses indexed by image; unregistered images carry none.
struct PoseSet {
  std::vector<std::optional<RigidTransform>> poses;

  int size() const { return static_cast<int>(poses.size()); }
  int registered_count() const;
  std::vector<Vec3> centers() const;
};

struct PairError {
  int i = 0;
  int j = 0;
  double rotation_deg = 0.0;
  double translation_deg = 0.0;
  /// True when either image lacks a pose; such pairs fail every threshold.
  bool failed = false;
};

/// Errors for every unordered pair (i < j). Throws InsufficientPoses unless
/// both sets have at least 2 poses, ShapeMismatch if sizes differ.
std::vector<PairError> relative_errors(const PoseSet& pred, const PoseSet& gt);

/// Percentage of pairs with rotation error strictly below each tau.
std::vector<double> rra(std::span<const PairError> errors, std::span<const double> taus);
std::vector<double> rta(std::span<const PairError> errors, std::span<const double> taus);
/// Mean over integer thresholds 1..30 degrees of min(RRA, RTA).
double maa30(std::span<const PairError> errors);

struct AteResult {
  double value = 0.0;
  /// Similarity taking predicted centers onto GT centers.
  RigidTransform alignment;
};

/// Mean center error after similarity alignment, divided by the RMS spread of
/// the GT centers. Throws InsufficientPoses with fewer than 2 common poses and
/// DegenerateInput for 2 poses or collinear centers.
AteResult ate(const PoseSet& pred, const PoseSet& gt);

/// Static 3D k-d tree for exact nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);
  /// Index of the nearest point; lowest index among equidistant points.
  std::size_t nearest(const Vec3& q) const;
  const Vec3& point(std::size_t i) const { return points_[i]; }
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t index;
    int axis;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<std::size_t>& order, std::size_t lo, std::size_t hi);
  void search(int node, const Vec3& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Mean over GT points of the distance to the nearest predicted point.
/// Throws EmptyCloud.
double chamfer(std::span<const Vec3> pred, std::span<const Vec3> gt);

struct MetricReport {
  std::vector<double> thresholds;
  std::vector<double> rra;
  std::vector<double> rta;
  double maa30 = 0.0;
  std::optional<double> ate;
  double registration = 0.0;  // percent
  int pairs = 0;
  std::optional<double> chamfer;
};

MetricReport evaluate_poses(const PoseSet& pred, const PoseSet& gt, std::span<const double> thresholds);

/// Aligned-column table.
void write_report_table(std::ostream& os, const MetricReport& r);
/// One `key=value` line per metric.
void write_report_keys(std::ostream& os, const MetricReport& r);

}  // namespace pmsfm

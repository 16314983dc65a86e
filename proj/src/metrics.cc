#include "pmsfm/metrics.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pmsfm/errors.h"

namespace pmsfm {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;
constexpr double kTinyTranslation = 1e-9;

double rotation_angle_deg(const Mat3& r) { return Eigen::AngleAxisd(r).angle() * kDeg; }

double direction_angle_deg(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)) * kDeg; }

double spread(std::span<const Vec3> c) {
  if (c.empty()) return 0.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& x : c) mean += x;
  mean /= static_cast<double>(c.size());
  double ss = 0.0;
  for (const auto& x : c) ss += (x - mean).squaredNorm();
  return std::sqrt(ss / static_cast<double>(c.size()));
}

double registered_spread(const PoseSet& s) {
  std::vector<Vec3> c;
  for (const auto& p : s.poses) {
    if (p) c.push_back(p->translation);
  }
  return spread(c);
}

std::vector<PairError> pair_errors(const PoseSet& pred, const PoseSet& gt) {
  if (pred.size() != gt.size()) throw ShapeMismatch("pose sets differ in size");
  const double pred_tiny = kTinyTranslation * registered_spread(pred);
  const double gt_tiny = kTinyTranslation * registered_spread(gt);
  std::vector<PairError> out;
  for (int i = 0; i < gt.size(); ++i) {
    for (int j = i + 1; j < gt.size(); ++j) {
      PairError e{i, j};
      const auto &pi = pred.poses[i], &pj = pred.poses[j], &gi = gt.poses[i], &gj = gt.poses[j];
      if (!pi || !pj || !gi || !gj) {
        e.failed = true;
        e.rotation_deg = e.translation_deg = 180.0;
        out.push_back(e);
        continue;
      }
      const Mat3 rp = pi->rotation.transpose() * pj->rotation;
      const Mat3 rg = gi->rotation.transpose() * gj->rotation;
      e.rotation_deg = rotation_angle_deg(rp * rg.transpose());
      const Vec3 tp = pi->rotation.transpose() * (pj->translation - pi->translation);
      const Vec3 tg = gi->rotation.transpose() * (gj->translation - gi->translation);
      const bool small_p = tp.norm() < pred_tiny;
      const bool small_g = tg.norm() < gt_tiny;
      if (small_p || small_g) {
        e.translation_deg = small_p && small_g ? 0.0 : 180.0;
      } else {
        e.translation_deg = direction_angle_deg(tp, tg);
      }
      out.push_back(e);
    }
  }
  return out;
}

template <typename Pick>
std::vector<double> accuracy(std::span<const PairError> errors, std::span<const double> taus, Pick pick) {
  std::vector<double> out;
  for (double tau : taus) {
    if (errors.empty()) {
      out.push_back(0.0);
      continue;
    }
    std::size_t hits = 0;
    for (const auto& e : errors) hits += !e.failed && pick(e) < tau ? 1 : 0;
    out.push_back(100.0 * static_cast<double>(hits) / static_cast<double>(errors.size()));
  }
  return out;
}

}  // namespace

int PoseSet::registered_count() const {
  return static_cast<int>(std::count_if(poses.begin(), poses.end(), [](const auto& p) { return p.has_value(); }));
}

std::vector<Vec3> PoseSet::centers() const {
  std::vector<Vec3> out;
  for (const auto& p : poses) out.push_back(p ? p->translation : Vec3::Constant(std::nan("")));
  return out;
}

std::vector<PairError> relative_errors(const PoseSet& pred, const PoseSet& gt) {
  if (pred.registered_count() < 2 || gt.registered_count() < 2) {
    throw InsufficientPoses("relative errors need at least 2 poses in each set");
  }
  return pair_errors(pred, gt);
}

std::vector<double> rra(std::span<const PairError> errors, std::span<const double> taus) {
  return accuracy(errors, taus, [](const PairError& e) { return e.rotation_deg; });
}

std::vector<double> rta(std::span<const PairError> errors, std::span<const double> taus) {
  return accuracy(errors, taus, [](const PairError& e) { return e.translation_deg; });
}

double maa30(std::span<const PairError> errors) {
  std::vector<double> taus(30);
  std::iota(taus.begin(), taus.end(), 1.0);
  const auto r = rra(errors, taus);
  const auto t = rta(errors, taus);
  double sum = 0.0;
  for (std::size_t k = 0; k < taus.size(); ++k) sum += std::min(r[k], t[k]);
  return sum / static_cast<double>(taus.size());
}

AteResult ate(const PoseSet& pred, const PoseSet& gt) {
  if (pred.size() != gt.size()) throw ShapeMismatch("pose sets differ in size");
  std::vector<Vec3> src, dst;
  for (int i = 0; i < gt.size(); ++i) {
    if (pred.poses[i] && gt.poses[i]) {
      src.push_back(pred.poses[i]->translation);
      dst.push_back(gt.poses[i]->translation);
    }
  }
  if (src.size() < 2) throw InsufficientPoses("trajectory error needs at least 2 common poses");
  AteResult out;
  out.alignment = procrustes(src, dst, AlignMode::kSimilarity);
  const double scale = spread(dst);
  if (!(scale > 0.0)) throw DegenerateInput("GT camera centers coincide");
  double sum = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) sum += (out.alignment(src[k]) - dst[k]).norm();
  out.value = sum / static_cast<double>(src.size()) / scale;
  return out;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  std::vector<std::size_t> order(points_.size());
  std::iota(order.begin(), order.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(order, 0, order.size());
}

int KdTree::build(std::vector<std::size_t>& order, std::size_t lo, std::size_t hi) {
  if (lo >= hi) return -1;
  Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 mx = -mn;
  for (std::size_t k = lo; k < hi; ++k) {
    mn = mn.cwiseMin(points_[order[k]]);
    mx = mx.cwiseMax(points_[order[k]]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(order.begin() + lo, order.begin() + mid, order.begin() + hi,
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({order[mid], axis});
  const int left = build(order, lo, mid);
  const int right = build(order, mid + 1, hi);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Vec3& q, std::size_t& best, double& best_d2) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.index];
  const double d2 = (p - q).squaredNorm();
  if (d2 < best_d2 || (d2 == best_d2 && n.index < best)) {
    best_d2 = d2;
    best = n.index;
  }
  const double diff = q[n.axis] - p[n.axis];
  const int near = diff < 0.0 ? n.left : n.right;
  const int far = diff < 0.0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::size_t KdTree::nearest(const Vec3& q) const {
  if (points_.empty()) throw EmptyCloud("nearest-neighbor query on an empty tree");
  std::size_t best = points_.size();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, q, best, best_d2);
  return best;
}

double chamfer(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  if (pred.empty() || gt.empty()) throw EmptyCloud("chamfer distance needs two non-empty clouds");
  const KdTree tree(std::vector<Vec3>(pred.begin(), pred.end()));
  double sum = 0.0;
  for (const auto& g : gt) sum += (tree.point(tree.nearest(g)) - g).norm();
  return sum / static_cast<double>(gt.size());
}

MetricReport evaluate_poses(const PoseSet& pred, const PoseSet& gt, std::span<const double> thresholds) {
  MetricReport r;
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  const auto errors = pair_errors(pred, gt);
  r.pairs = static_cast<int>(errors.size());
  r.rra = rra(errors, thresholds);
  r.rta = rta(errors, thresholds);
  r.maa30 = maa30(errors);
  int common = 0;
  for (int i = 0; i < gt.size(); ++i) common += pred.poses[i] && gt.poses[i] ? 1 : 0;
  r.registration = gt.size() > 0 ? 100.0 * common / gt.size() : 0.0;
  try {
    r.ate = ate(pred, gt).value;
  } catch (const DegenerateInput&) {
  } catch (const InsufficientPoses&) {
  }
  return r;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string trim_tau(double tau) {
  std::ostringstream os;
  os << tau;
  return os.str();
}

}  // namespace

void write_report_table(std::ostream& os, const MetricReport& r) {
  std::vector<std::pair<std::string, std::string>> rows;
  for (std::size_t k = 0; k < r.thresholds.size(); ++k) {
    rows.emplace_back("RRA@" + trim_tau(r.thresholds[k]), fmt(r.rra[k]));
    rows.emplace_back("RTA@" + trim_tau(r.thresholds[k]), fmt(r.rta[k]));
  }
  rows.emplace_back("mAA@30", fmt(r.maa30));
  rows.emplace_back("ATE", r.ate ? fmt(*r.ate) : "n/a");
  rows.emplace_back("Reg.", fmt(r.registration));
  rows.emplace_back("pairs", std::to_string(r.pairs));
  if (r.chamfer) rows.emplace_back("Chamfer", fmt(*r.chamfer));
  std::size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  for (const auto& [k, v] : rows) os << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
}

void write_report_keys(std::ostream& os, const MetricReport& r) {
  for (std::size_t k = 0; k < r.thresholds.size(); ++k) {
    os << "rra@" << trim_tau(r.thresholds[k]) << '=' << fmt(r.rra[k]) << '\n';
    os << "rta@" << trim_tau(r.thresholds[k]) << '=' << fmt(r.rta[k]) << '\n';
  }
  os << "maa30=" << fmt(r.maa30) << '\n';
  os << "ate=" << (r.ate ? fmt(*r.ate) : "nan") << '\n';
  os << "reg=" << fmt(r.registration) << '\n';
  os << "pairs=" << r.pairs << '\n';
  if (r.chamfer) os << "chamfer=" << fmt(*r.chamfer) << '\n';
}

}  // namespace pmsfm

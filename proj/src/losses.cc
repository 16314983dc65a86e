#include "pmsfm/losses.h"

#include <cmath>

#include "pmsfm/errors.h"

namespace pmsfm {

ConfLoss conf_loss(const Pointmap& gt, const Pointmap& pred, const ConfidenceMap& conf,
                   std::span<const std::uint8_t> valid, double alpha, Regularizer kind) {
  if (!gt.same_shape(pred) || !conf.same_shape(gt) || valid.size() != gt.size()) {
    throw ShapeMismatch("loss operands differ in shape");
  }
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  ConfLoss out;
  out.grad_points.assign(gt.size(), Vec3::Zero());
  out.grad_conf.assign(gt.size(), 0.0);
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (!valid[p] || !gt.valid(p) || !pred.valid(p)) continue;
    const Vec3 diff = pred[p] - gt[p];
    const double err = diff.norm();
    const double c = conf[p];
    if (kind == Regularizer::kLinear) {
      out.value += c * err - alpha * c;
      out.grad_conf[p] = err - alpha;
    } else {
      out.value += c * err - alpha * std::log(c);
      out.grad_conf[p] = err - alpha / c;
    }
    if (err > 0.0) out.grad_points[p] = c * diff / err;
  }
  return out;
}

ConfLoss conf_loss(const Pointmap& gt, const Pointmap& pred, const ConfidenceMap& conf, double alpha,
                   Regularizer kind) {
  const std::vector<std::uint8_t> all(gt.size(), 1);
  return conf_loss(gt, pred, conf, all, alpha, kind);
}

double pairwise_loss(const GroundTruthScene& scene, const EdgeDecodes& decodes, const SceneGraph& graph,
                     const LossConfig& cfg, std::vector<EdgeLoss>* per_edge) {
  double sum = 0.0;
  if (per_edge) per_edge->clear();
  for (const TreeEdge& e : graph.edges) {
    const auto it = decodes.find({e.parent, e.child});
    if (it == decodes.end()) {
      throw MissingEdge("no decode for edge " + std::to_string(e.parent) + "-" + std::to_string(e.child));
    }
    const EdgeDecode& d = it->second;
    const RigidTransform to_frame = scene.images.at(e.parent).pose.inverse();
    const Pointmap gt_ref = apply(to_frame, scene.images.at(e.parent).points);
    const Pointmap gt_other = apply(to_frame, scene.images.at(e.child).points);
    const double v = conf_loss(gt_ref, d.ref_points, d.ref_conf, cfg.alpha, cfg.regularizer).value +
                     conf_loss(gt_other, d.other_points, d.other_conf, cfg.alpha, cfg.regularizer).value;
    if (per_edge) per_edge->push_back({e.parent, e.child, v});
    sum += v;
  }
  return sum;
}

double global_loss(const GroundTruthScene& scene, const Reconstruction& recon, const LossConfig& cfg,
                   std::vector<ImageLoss>* per_image, double* align_rms) {
  if (recon.size() != scene.size()) throw ShapeMismatch("reconstruction and scene differ in image count");
  std::vector<Vec3> src, dst;
  for (int i = 0; i < recon.size(); ++i) {
    if (!recon.registered[i]) continue;
    const Pointmap& pred = recon.points[i];
    const Pointmap& gt = scene.images[i].points;
    if (!pred.same_shape(gt)) throw ShapeMismatch("reconstructed pointmap differs from GT shape");
    for (std::size_t p = 0; p < gt.size(); ++p) {
      if (pred.valid(p) && gt.valid(p)) {
        src.push_back(pred[p]);
        dst.push_back(gt[p]);
      }
    }
  }
  const RigidTransform align = procrustes(src, dst, cfg.mode);
  if (align_rms) {
    double ss = 0.0;
    for (std::size_t k = 0; k < src.size(); ++k) ss += (align(src[k]) - dst[k]).squaredNorm();
    *align_rms = std::sqrt(ss / static_cast<double>(src.size()));
  }

  double sum = 0.0;
  if (per_image) per_image->clear();
  for (int i = 0; i < recon.size(); ++i) {
    const Pointmap& gt = scene.images[i].points;
    if (!recon.registered[i] || static_cast<int>(gt.valid_count()) < cfg.min_valid_pixels) {
      if (per_image) per_image->push_back({i, 0.0, true});
      continue;
    }
    const double v = conf_loss(gt, apply(align, recon.points[i]), recon.confidence[i], cfg.alpha, cfg.regularizer).value;
    if (per_image) per_image->push_back({i, v, false});
    sum += v;
  }
  return sum;
}

double total_loss(double pair, double global, double lambda) {
  if (lambda < 0.0) throw InvalidArgument("lambda must be non-negative");
  return pair + lambda * global;
}

LossReport evaluate_losses(const GroundTruthScene& scene, const EdgeDecodes& decodes, const SceneGraph& graph,
                           const Reconstruction& recon, const LossConfig& cfg) {
  LossReport r;
  r.lambda = cfg.lambda;
  r.pair_loss = pairwise_loss(scene, decodes, graph, cfg, &r.per_edge);
  r.global_loss = global_loss(scene, recon, cfg, &r.per_image, &r.align_rms);
  r.total = total_loss(r.pair_loss, r.global_loss, cfg.lambda);
  return r;
}

}  // namespace pmsfm

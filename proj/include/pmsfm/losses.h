#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include "pmsfm/accumulate.h"
#include "pmsfm/backend.h"
#include "pmsfm/geometry.h"
#include "pmsfm/scene_graph.h"

namespace pmsfm {

enum class Regularizer { kLinear, kLog };

struct LossConfig {
  double alpha = 0.2;
  double lambda = 0.1;
  int min_valid_pixels = 100;
  Regularizer regularizer = Regularizer::kLinear;
  AlignMode mode = AlignMode::kRigid;
};

struct ConfLoss {
  double value = 0.0;
  std::vector<Vec3> grad_points;  // zero outside the valid set
  std::vector<double> grad_conf;
};

/// sum over valid p of C_p |X_p - Xgt_p| - alpha * C_p (linear) or
/// - alpha * log C_p (log), with analytic gradients. `valid` selects the
/// supervised pixels; pixels invalid in gt or pred are skipped as well.
ConfLoss conf_loss(const Pointmap& gt, const Pointmap& pred, const ConfidenceMap& conf,
                   std::span<const std::uint8_t> valid, double alpha, Regularizer kind = Regularizer::kLinear);
/// Supervises every pixel valid in both gt and pred.
ConfLoss conf_loss(const Pointmap& gt, const Pointmap& pred, const ConfidenceMap& conf, double alpha,
                   Regularizer kind = Regularizer::kLinear);

using EdgeDecodes = std::map<std::pair<int, int>, EdgeDecode>;

struct EdgeLoss {
  int parent = 0;
  int child = 0;
  double value = 0.0;
};

struct ImageLoss {
  int image = 0;
  double value = 0.0;
  bool skipped = false;
};

struct LossReport {
  double pair_loss = 0.0;
  double global_loss = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  /// RMS residual of the prediction-to-GT alignment.
  double align_rms = 0.0;
  std::vector<EdgeLoss> per_edge;
  std::vector<ImageLoss> per_image;
};

/// Sum over tree edges of the confidence loss of both pointmaps against the
/// GT expressed in the parent's camera frame. Throws MissingEdge.
double pairwise_loss(const GroundTruthScene& scene, const EdgeDecodes& decodes, const SceneGraph& graph,
                     const LossConfig& cfg, std::vector<EdgeLoss>* per_edge = nullptr);

/// Aligns all registered global pointmaps onto the GT with one unweighted fit,
/// then sums the per-image confidence losses. Images with fewer than
/// cfg.min_valid_pixels valid GT pixels contribute 0.
double global_loss(const GroundTruthScene& scene, const Reconstruction& recon, const LossConfig& cfg,
                   std::vector<ImageLoss>* per_image = nullptr, double* align_rms = nullptr);

double total_loss(double pair, double global, double lambda);

LossReport evaluate_losses(const GroundTruthScene& scene, const EdgeDecodes& decodes, const SceneGraph& graph,
                           const Reconstruction& recon, const LossConfig& cfg);

}  // namespace pmsfm

#pragma once

#include <optional>
#include <vector>

#include "pmsfm/backend.h"
#include "pmsfm/geometry.h"
#include "pmsfm/scene_graph.h"

namespace pmsfm {

/// Global pointmaps of every image, all in the camera frame of the root.
struct Reconstruction {
  int root = 0;
  std::vector<Pointmap> points;
  std::vector<ConfidenceMap> confidence;
  std::vector<bool> registered;
  /// For every node that served as a parent: its camera frame -> global.
  std::vector<std::optional<RigidTransform>> parent_frames;
  /// Wall time spent decoding and registering, in milliseconds.
  double decode_ms = 0.0;
  double register_ms = 0.0;

  int size() const { return static_cast<int>(points.size()); }
  int registered_count() const;
};

struct AccumulateOptions {
  bool symmetrize = true;
  AlignMode mode = AlignMode::kRigid;
  int chunk = 32;
  /// 0 means one worker per hardware thread.
  int threads = 0;
};

/// Element-wise geometric mean.
ConfidenceMap merge_confidence(const ConfidenceMap& existing, const ConfidenceMap& incoming);

/// Fuses the decodes of (i, j) and (j, i) into one decode in frame i. The
/// backward decode is first brought into frame i by a confidence-weighted fit
/// on image i's two pointmaps, then every pixel is blended with weight
/// log C_fwd / (log C_fwd + log C_bwd).
EdgeDecode symmetric_fuse(const EdgeDecode& fwd, const EdgeDecode& bwd, AlignMode mode = AlignMode::kRigid);

/// Registers every decode of the tree into the root frame in BFS order. Nodes
/// whose registration is degenerate are marked unregistered together with
/// their subtree.
Reconstruction accumulate(const SceneGraph& graph, const DecoderBackend& backend, const AccumulateOptions& opts = {});

}  // namespace pmsfm

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pmsfm/accumulate.h"
#include "pmsfm/backend.h"
#include "pmsfm/latent_align.h"
#include "pmsfm/metrics.h"
#include "pmsfm/pose_extract.h"
#include "pmsfm/scene_graph.h"

namespace pmsfm {

enum class GraphKind { kSpt, kMst, kOracle };

GraphKind parse_graph_kind(const std::string& name);
std::string to_string(GraphKind kind);

struct PipelineOptions {
  GraphKind graph = GraphKind::kSpt;
  GraphOptions graph_options;
  AccumulateOptions accumulate;
  PnPConfig pnp;
  /// 0 skips the latent alignment stage.
  int align_layers = 4;
  int tokens = 16;
  int token_dim = 16;
  int heads = 4;
  std::uint64_t seed = 0;
};

struct StageTimings {
  double image_encoding = 0.0;
  double latent_alignment = 0.0;
  double graph_construction = 0.0;
  double pointmap_decoding = 0.0;
  double global_accumulation = 0.0;
  double pose_extraction = 0.0;
  double total = 0.0;
};

struct PipelineResult {
  SceneGraph graph;
  Reconstruction recon;
  PoseExtraction poses;
  StageTimings timings;  // milliseconds
};

/// Per-image retrieval embeddings: binary bag of the surface cells (cubes of
/// side cell_size * scene scale) that the image observes.
std::vector<Eigen::VectorXd> scene_embeddings(const GroundTruthScene& scene, double cell_size = 0.1);

/// Deterministic token grids derived from the embeddings by fixed random
/// projections (one per token slot).
std::vector<TokenGrid> encode_tokens(std::span<const Eigen::VectorXd> embeddings, int tokens, int dim,
                                     std::uint64_t seed);

/// Runs graph construction, decoding, accumulation and pose extraction.
/// `scene` is only consulted for GraphKind::kOracle and may be null otherwise.
PipelineResult run_pipeline(const DecoderBackend& backend, std::span<const Eigen::VectorXd> embeddings,
                            const GroundTruthScene* scene, const PipelineOptions& opts);

PoseSet pose_set(const PoseExtraction& poses);
PoseSet pose_set(const GroundTruthScene& scene);

}  // namespace pmsfm

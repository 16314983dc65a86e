#include "pmsfm/pipeline.h"

#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "pmsfm/errors.h"
#include "pmsfm/seed.h"

namespace pmsfm {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

GraphKind parse_graph_kind(const std::string& name) {
  if (name == "spt") return GraphKind::kSpt;
  if (name == "mst") return GraphKind::kMst;
  if (name == "oracle") return GraphKind::kOracle;
  throw InvalidArgument("unknown graph kind: " + name);
}

std::string to_string(GraphKind kind) {
  switch (kind) {
    case GraphKind::kSpt:
      return "spt";
    case GraphKind::kMst:
      return "mst";
    case GraphKind::kOracle:
      return "oracle";
  }
  return "spt";
}

std::vector<Eigen::VectorXd> scene_embeddings(const GroundTruthScene& scene, double cell_size) {
  if (!(cell_size > 0.0)) throw InvalidArgument("cell size must be positive");
  const double cell = cell_size * scene.scale;
  std::map<std::array<long long, 3>, Eigen::Index> ids;
  std::vector<std::vector<Eigen::Index>> seen(scene.images.size());
  for (std::size_t i = 0; i < scene.images.size(); ++i) {
    const Pointmap& pm = scene.images[i].points;
    for (std::size_t p = 0; p < pm.size(); ++p) {
      if (!pm.valid(p)) continue;
      const Vec3 q = (pm[p] / cell).array().floor();
      const std::array<long long, 3> key{static_cast<long long>(q.x()), static_cast<long long>(q.y()),
                                         static_cast<long long>(q.z())};
      const auto it = ids.emplace(key, static_cast<Eigen::Index>(ids.size())).first;
      seen[i].push_back(it->second);
    }
  }
  std::vector<Eigen::VectorXd> out;
  for (const auto& cells : seen) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ids.size()));
    for (Eigen::Index c : cells) e(c) = 1.0;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<TokenGrid> encode_tokens(std::span<const Eigen::VectorXd> embeddings, int tokens, int dim,
                                     std::uint64_t seed) {
  if (embeddings.empty()) return {};
  const Eigen::Index in = embeddings[0].size();
  std::mt19937_64 rng(derive_seed(seed, {0xe4c0de}));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(in, 1))));
  std::vector<Eigen::MatrixXd> proj(tokens, Eigen::MatrixXd(in, dim));
  for (auto& m : proj) m = m.unaryExpr([&](double) { return normal(rng); });
  std::vector<TokenGrid> out;
  for (const auto& e : embeddings) {
    if (e.size() != in) throw ShapeMismatch("embeddings differ in dimension");
    TokenGrid g(tokens, dim);
    for (int t = 0; t < tokens; ++t) g.row(t) = e.transpose() * proj[t];
    out.push_back(std::move(g));
  }
  return out;
}

PipelineResult run_pipeline(const DecoderBackend& backend, std::span<const Eigen::VectorXd> embeddings,
                            const GroundTruthScene* scene, const PipelineOptions& opts) {
  const auto start = Clock::now();
  PipelineResult r;
  const int n = backend.size();
  if (n < 2) throw InvalidArgument("reconstruction needs at least 2 images");
  if (static_cast<int>(embeddings.size()) != n) throw ShapeMismatch("one embedding per image is required");

  auto t = Clock::now();
  const auto tokens = encode_tokens(embeddings, opts.tokens, opts.token_dim, opts.seed);
  r.timings.image_encoding = ms_since(t);

  t = Clock::now();
  if (opts.align_layers > 0) {
    const auto w = AlignWeights::random(opts.token_dim, opts.heads, opts.align_layers, opts.seed);
    latent_align_forward(tokens, w);
  }
  r.timings.latent_alignment = ms_since(t);

  t = Clock::now();
  if (opts.graph == GraphKind::kOracle) {
    if (!scene) throw InvalidArgument("the oracle graph needs the ground-truth scene");
    const SimilarityMatrix s = overlap_similarity(*scene);
    r.graph = build_spt(s, select_root(s), opts.graph_options);
  } else {
    const SimilarityMatrix s = compute_similarity(embeddings);
    r.graph = opts.graph == GraphKind::kSpt ? build_spt(s, select_root(s), opts.graph_options)
                                            : build_mst(s, opts.graph_options);
  }
  r.timings.graph_construction = ms_since(t);

  r.recon = accumulate(r.graph, backend, opts.accumulate);
  r.timings.pointmap_decoding = r.recon.decode_ms;
  r.timings.global_accumulation = r.recon.register_ms;

  t = Clock::now();
  r.poses = extract_all(r.recon, opts.pnp);
  r.timings.pose_extraction = ms_since(t);
  r.timings.total = ms_since(start);
  return r;
}

PoseSet pose_set(const PoseExtraction& poses) {
  PoseSet s;
  for (const auto& p : poses.poses) {
    if (p.registered) {
      s.poses.emplace_back(p.pose);
    } else {
      s.poses.emplace_back(std::nullopt);
    }
  }
  return s;
}

PoseSet pose_set(const GroundTruthScene& scene) {
  PoseSet s;
  for (const auto& v : scene.images) s.poses.emplace_back(v.pose);
  return s;
}

}  // namespace pmsfm

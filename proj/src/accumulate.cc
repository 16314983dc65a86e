#include "pmsfm/accumulate.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include "pmsfm/errors.h"

namespace pmsfm {

namespace {

struct Correspondences {
  std::vector<Vec3> src, dst;
  std::vector<double> weights;
};

// Blends two pointmaps of the same image pixel by pixel.
void fuse_maps(const Pointmap& a, const ConfidenceMap& ca, const Pointmap& b, const ConfidenceMap& cb,
               Pointmap& out, ConfidenceMap& cout) {
  out = Pointmap(a.height(), a.width());
  cout = ConfidenceMap(a.height(), a.width());
  for (std::size_t p = 0; p < a.size(); ++p) {
    const bool va = a.valid(p);
    const bool vb = b.valid(p);
    if (va && vb) {
      const double la = std::log(ca[p]);
      const double lb = std::log(cb[p]);
      const double g = la + lb > 0.0 ? la / (la + lb) : 0.5;
      out.set(p, g * a[p] + (1.0 - g) * b[p]);
      cout[p] = std::sqrt(ca[p] * cb[p]);
    } else if (va) {
      out.set(p, a[p]);
      cout[p] = ca[p];
    } else if (vb) {
      out.set(p, b[p]);
      cout[p] = cb[p];
    }
  }
}

std::vector<EdgeDecode> decode_chunk(const DecoderBackend& backend, const std::vector<std::pair<int, int>>& jobs,
                                     int threads) {
  std::vector<EdgeDecode> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      try {
        out[k] = backend.decode(jobs[k].first, jobs[k].second);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int count = std::min<int>(threads, static_cast<int>(jobs.size()));
  if (count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

int Reconstruction::registered_count() const {
  return static_cast<int>(std::count(registered.begin(), registered.end(), true));
}

ConfidenceMap merge_confidence(const ConfidenceMap& existing, const ConfidenceMap& incoming) {
  if (!existing.same_shape(incoming)) throw ShapeMismatch("confidence maps differ in shape");
  ConfidenceMap out(existing.height(), existing.width());
  for (std::size_t p = 0; p < existing.size(); ++p) out[p] = std::sqrt(existing[p] * incoming[p]);
  return out;
}

EdgeDecode symmetric_fuse(const EdgeDecode& fwd, const EdgeDecode& bwd, AlignMode mode) {
  if (!fwd.ref_points.same_shape(bwd.other_points) || !fwd.other_points.same_shape(bwd.ref_points) ||
      !fwd.ref_conf.same_shape(fwd.ref_points) || !bwd.other_conf.same_shape(bwd.other_points) ||
      !fwd.other_conf.same_shape(fwd.other_points) || !bwd.ref_conf.same_shape(bwd.ref_points)) {
    throw ShapeMismatch("forward and backward decodes are inconsistent");
  }
  Correspondences c;
  for (std::size_t p = 0; p < fwd.ref_points.size(); ++p) {
    if (!fwd.ref_points.valid(p) || !bwd.other_points.valid(p)) continue;
    c.src.push_back(bwd.other_points[p]);
    c.dst.push_back(fwd.ref_points[p]);
    c.weights.push_back(0.5 * (std::log(fwd.ref_conf[p]) + std::log(bwd.other_conf[p])));
  }
  const RigidTransform to_i = weighted_procrustes(c.src, c.dst, c.weights, mode);

  EdgeDecode out;
  fuse_maps(fwd.ref_points, fwd.ref_conf, apply(to_i, bwd.other_points), bwd.other_conf, out.ref_points,
            out.ref_conf);
  fuse_maps(fwd.other_points, fwd.other_conf, apply(to_i, bwd.ref_points), bwd.ref_conf, out.other_points,
            out.other_conf);
  return out;
}

Reconstruction accumulate(const SceneGraph& graph, const DecoderBackend& backend, const AccumulateOptions& opts) {
  if (graph.n != backend.size()) throw InvalidArgument("graph and backend disagree on the image count");
  if (opts.chunk < 1) throw InvalidArgument("chunk size must be positive");
  const int threads = opts.threads > 0 ? opts.threads : std::max(1u, std::thread::hardware_concurrency());

  Reconstruction r;
  r.root = graph.root;
  r.points.resize(graph.n);
  r.confidence.resize(graph.n);
  r.registered.assign(graph.n, false);
  r.parent_frames.resize(graph.n);
  if (graph.edges.empty()) return r;

  bool first = true;
  for (std::size_t start = 0; start < graph.edges.size(); start += opts.chunk) {
    const std::size_t stop = std::min(graph.edges.size(), start + opts.chunk);
    std::vector<std::pair<int, int>> jobs;
    for (std::size_t e = start; e < stop; ++e) {
      jobs.emplace_back(graph.edges[e].parent, graph.edges[e].child);
      if (opts.symmetrize) jobs.emplace_back(graph.edges[e].child, graph.edges[e].parent);
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<EdgeDecode> decodes = decode_chunk(backend, jobs, threads);
    const auto t1 = std::chrono::steady_clock::now();
    r.decode_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();

    for (std::size_t e = start; e < stop; ++e) {
      const int k = graph.edges[e].parent;
      const int l = graph.edges[e].child;
      const std::size_t slot = (e - start) * (opts.symmetrize ? 2 : 1);
      EdgeDecode d = std::move(decodes[slot]);
      if (opts.symmetrize) {
        try {
          d = symmetric_fuse(d, decodes[slot + 1], opts.mode);
        } catch (const DegenerateInput&) {
          // keep the forward decode alone
        }
      }

      if (first) {
        first = false;
        r.points[k] = std::move(d.ref_points);
        r.confidence[k] = std::move(d.ref_conf);
        r.registered[k] = true;
        r.parent_frames[k] = RigidTransform::Identity();
        r.points[l] = std::move(d.other_points);
        r.confidence[l] = std::move(d.other_conf);
        r.registered[l] = r.points[l].valid_count() >= 3;
        continue;
      }
      if (!r.registered[k]) continue;

      r.confidence[k] = merge_confidence(r.confidence[k], d.ref_conf);
      Correspondences c;
      for (std::size_t p = 0; p < r.points[k].size(); ++p) {
        if (!r.points[k].valid(p) || !d.ref_points.valid(p)) continue;
        c.src.push_back(r.points[k][p]);
        c.dst.push_back(d.ref_points[p]);
        c.weights.push_back(std::log(r.confidence[k][p]));
      }
      RigidTransform local_to_global;
      try {
        local_to_global = weighted_procrustes(c.src, c.dst, c.weights, opts.mode).inverse();
      } catch (const DegenerateInput&) {
        continue;
      }
      r.parent_frames[k] = local_to_global;
      r.points[l] = apply(local_to_global, d.other_points);
      r.confidence[l] = std::move(d.other_conf);
      r.registered[l] = r.points[l].valid_count() >= 3;
    }
    r.register_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1).count();
  }
  return r;
}

}  // namespace pmsfm

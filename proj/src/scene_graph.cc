#include "pmsfm/scene_graph.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "pmsfm/backend.h"
#include "pmsfm/errors.h"

namespace pmsfm {

SimilarityMatrix::SimilarityMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
  if (values_.rows() != values_.cols()) throw ShapeMismatch("similarity matrix must be square");
  const auto n = values_.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (values_(i, i) != 1.0) throw InvalidArgument("similarity diagonal must be exactly 1");
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = values_(i, j);
      if (!(v >= -1.0 && v <= 1.0)) throw InvalidArgument("similarity outside [-1, 1]");
      if (std::abs(v - values_(j, i)) > 1e-9) throw InvalidArgument("similarity matrix not symmetric");
    }
  }
}

std::vector<int> SceneGraph::parents() const {
  std::vector<int> parent(n, -1);
  for (const auto& e : edges) parent[e.child] = e.parent;
  return parent;
}

std::vector<int> SceneGraph::depths() const {
  std::vector<int> depth(n, 0);
  for (const auto& e : edges) depth[e.child] = depth[e.parent] + 1;
  return depth;
}

std::vector<double> SceneGraph::root_path_costs() const {
  std::vector<double> cost(n, 0.0);
  for (const auto& e : edges) cost[e.child] = cost[e.parent] + e.cost;
  return cost;
}

double SceneGraph::total_cost() const {
  double total = 0.0;
  for (const auto& e : edges) total += e.cost;
  return total;
}

SimilarityMatrix compute_similarity(std::span<const Eigen::VectorXd> embeddings) {
  const int n = static_cast<int>(embeddings.size());
  if (n < 2) throw InvalidArgument("need at least two embeddings");
  std::vector<Eigen::VectorXd> unit;
  unit.reserve(n);
  for (const auto& e : embeddings) {
    if (e.size() != embeddings[0].size()) throw ShapeMismatch("embedding dimensions differ");
    const double norm = e.norm();
    if (!(norm >= 1e-12)) throw ZeroEmbedding("embedding has zero norm");
    unit.push_back(e / norm);
  }
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double v = std::clamp(unit[i].dot(unit[j]), -1.0, 1.0);
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return SimilarityMatrix(std::move(s));
}

int select_root(const SimilarityMatrix& s) {
  int best = 0;
  double best_sum = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < s.size(); ++j) {
    double sum = 0.0;
    for (int i = 0; i < s.size(); ++i) sum += s(i, j);
    if (sum > best_sum) {
      best_sum = sum;
      best = j;
    }
  }
  return best;
}

SceneGraph tree_from_parents(const SimilarityMatrix& s, int root, const std::vector<int>& parent,
                             const GraphOptions& opts) {
  const int n = s.size();
  std::vector<std::vector<int>> children(n);
  for (int v = 0; v < n; ++v) {
    if (v == root) continue;
    children[parent[v]].push_back(v);
  }
  SceneGraph g;
  g.n = n;
  g.root = root;
  std::deque<int> queue{root};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int c : children[u]) {
      g.edges.push_back({u, c, opts.cost_shift - s(u, c)});
      queue.push_back(c);
    }
  }
  if (static_cast<int>(g.edges.size()) != n - 1) throw DegenerateInput("parent array is not a spanning tree");
  return g;
}

SceneGraph build_spt(const SimilarityMatrix& s, int root, const GraphOptions& opts) {
  const int n = s.size();
  if (n < 2) throw InvalidArgument("scene graph needs at least two images");
  if (root < 0 || root >= n) throw InvalidArgument("root out of range");

  // Dense Dijkstra: the graph is complete, so O(n^2) beats a heap.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, kInf);
  std::vector<int> parent(n, -1);
  std::vector<bool> done(n, false);
  dist[root] = 0.0;
  for (int iter = 0; iter < n; ++iter) {
    int u = -1;
    for (int v = 0; v < n; ++v) {
      if (!done[v] && (u < 0 || dist[v] < dist[u])) u = v;
    }
    done[u] = true;
    for (int v = 0; v < n; ++v) {
      if (done[v]) continue;
      const double cost = opts.cost_shift - s(u, v);
      if (cost < 0.0) throw InvalidArgument("negative edge cost; raise cost_shift");
      const double alt = dist[u] + cost;
      if (alt < dist[v] || (alt == dist[v] && u < parent[v])) {
        dist[v] = alt;
        parent[v] = u;
      }
    }
  }
  return tree_from_parents(s, root, parent, opts);
}

SceneGraph build_mst(const SimilarityMatrix& s, const GraphOptions& opts) {
  const int n = s.size();
  if (n < 2) throw InvalidArgument("scene graph needs at least two images");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> key(n, kInf);
  std::vector<int> link(n, -1);
  std::vector<bool> in_tree(n, false);
  key[0] = 0.0;
  for (int iter = 0; iter < n; ++iter) {
    int u = -1;
    for (int v = 0; v < n; ++v) {
      if (!in_tree[v] && (u < 0 || key[v] < key[u])) u = v;
    }
    in_tree[u] = true;
    for (int v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      const double cost = opts.cost_shift - s(u, v);
      if (cost < key[v]) {
        key[v] = cost;
        link[v] = u;
      }
    }
  }

  // Undirected adjacency, then orient away from the selected root.
  std::vector<std::vector<int>> adj(n);
  for (int v = 1; v < n; ++v) {
    adj[v].push_back(link[v]);
    adj[link[v]].push_back(v);
  }
  const int root = select_root(s);
  std::vector<int> parent(n, -1);
  std::vector<bool> seen(n, false);
  std::deque<int> queue{root};
  seen[root] = true;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : adj[u]) {
      if (seen[v]) continue;
      seen[v] = true;
      parent[v] = u;
      queue.push_back(v);
    }
  }
  return tree_from_parents(s, root, parent, opts);
}

Eigen::MatrixXd covisibility_fractions(const GroundTruthScene& scene) {
  const int n = static_cast<int>(scene.images.size());
  Eigen::MatrixXd frac = Eigen::MatrixXd::Identity(n, n);
  std::vector<RigidTransform> world_to_cam(n);
  for (int j = 0; j < n; ++j) world_to_cam[j] = scene.images[j].pose.inverse();

  for (int i = 0; i < n; ++i) {
    const Pointmap& pts = scene.images[i].points;
    const double total = static_cast<double>(pts.valid_count());
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& cam = scene.images[j];
      const double w = cam.points.width();
      const double h = cam.points.height();
      std::size_t seen = 0;
      for (std::size_t p = 0; p < pts.size(); ++p) {
        if (!pts.valid(p)) continue;
        const Vec3 x = world_to_cam[j](pts[p]);
        if (!(x.z() > 0.0)) continue;
        const Vec2 px = cam.intrinsics.project(x);
        if (px.x() >= -0.5 && px.x() < w - 0.5 && px.y() >= -0.5 && px.y() < h - 0.5) ++seen;
      }
      frac(i, j) = total > 0 ? static_cast<double>(seen) / total : 0.0;
    }
  }
  return frac;
}

SimilarityMatrix overlap_similarity(const GroundTruthScene& scene) {
  const Eigen::MatrixXd frac = covisibility_fractions(scene);
  const auto n = frac.rows();
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = 2.0 * (0.5 * (frac(i, j) + frac(j, i))) - 1.0;
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return SimilarityMatrix(std::move(s));
}

void write_graph(std::ostream& os, const SceneGraph& g) {
  os << "root " << g.root << '\n';
  os << std::setprecision(17);
  for (const auto& e : g.edges) os << "edge " << e.parent << ' ' << e.child << ' ' << e.cost << '\n';
}

SceneGraph read_graph(std::istream& is) {
  SceneGraph g;
  std::string line;
  bool have_root = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "root" && !have_root && (ls >> g.root)) {
      have_root = true;
    } else if (tag == "edge" && have_root) {
      TreeEdge e;
      if (!(ls >> e.parent >> e.child >> e.cost)) throw FormatError("malformed edge line: " + line);
      g.edges.push_back(e);
    } else {
      throw FormatError("unexpected graph line: " + line);
    }
  }
  if (!have_root) throw FormatError("graph has no root line");
  g.n = static_cast<int>(g.edges.size()) + 1;
  std::vector<bool> seen(g.n, false);
  if (g.root < 0 || g.root >= g.n) throw FormatError("root out of range");
  seen[g.root] = true;
  for (const auto& e : g.edges) {
    if (e.parent < 0 || e.parent >= g.n || e.child < 0 || e.child >= g.n || !seen[e.parent] || seen[e.child]) {
      throw FormatError("graph edges do not form a BFS-ordered tree");
    }
    seen[e.child] = true;
  }
  return g;
}

}  // namespace pmsfm

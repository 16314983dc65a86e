#pragma once

#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace pmsfm {

struct GroundTruthScene;

/// Symmetric n x n matrix of pairwise image similarities in [-1, 1] with a
/// unit diagonal.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  /// Validates symmetry (1e-9), the unit diagonal and the [-1, 1] range.
  explicit SimilarityMatrix(Eigen::MatrixXd values);

  int size() const { return static_cast<int>(values_.rows()); }
  double operator()(int i, int j) const { return values_(i, j); }
  const Eigen::MatrixXd& values() const { return values_; }

 private:
  Eigen::MatrixXd values_;
};

struct TreeEdge {
  int parent = 0;
  int child = 0;
  double cost = 0.0;
};

/// Rooted spanning tree over n images. Edges are stored in BFS order from the
/// root, so every parent has been reached before any of its children.
struct SceneGraph {
  int n = 0;
  int root = 0;
  std::vector<TreeEdge> edges;

  /// parent[root] == -1.
  std::vector<int> parents() const;
  std::vector<int> depths() const;
  /// Cost of the tree path from the root to every node.
  std::vector<double> root_path_costs() const;
  double total_cost() const;
};

/// Edge cost used by every graph builder: shift - S_ij. The shift keeps costs
/// non-negative so Dijkstra is well defined.
struct GraphOptions {
  double cost_shift = 1.0;
};

SimilarityMatrix compute_similarity(std::span<const Eigen::VectorXd> embeddings);

/// argmax_j sum_i S_ij, lowest index on ties.
int select_root(const SimilarityMatrix& s);

/// Shortest-path tree from root over the complete graph.
SceneGraph build_spt(const SimilarityMatrix& s, int root, const GraphOptions& opts = {});

/// Minimum spanning tree (Prim), re-rooted at select_root(s).
SceneGraph build_mst(const SimilarityMatrix& s, const GraphOptions& opts = {});

/// Ground-truth co-visibility similarity: for every pair, the fraction of one
/// image's valid points that project inside the other image with positive
/// depth, symmetrized and mapped to [-1, 1] via 2 * frac - 1.
SimilarityMatrix overlap_similarity(const GroundTruthScene& scene);

/// Raw directed co-visibility fractions; entry (i, j) is the share of image
/// i's valid points seen by camera j.
Eigen::MatrixXd covisibility_fractions(const GroundTruthScene& scene);

/// Builds a tree from a parent array and emits its edges in BFS order with
/// children visited in increasing index.
SceneGraph tree_from_parents(const SimilarityMatrix& s, int root, const std::vector<int>& parent,
                             const GraphOptions& opts = {});

/// `root <r>` followed by one `edge <parent> <child> <cost>` line per edge.
void write_graph(std::ostream& os, const SceneGraph& g);
/// Parses the write_graph format; throws FormatError unless the edges form a
/// tree listed parent-before-child.
SceneGraph read_graph(std::istream& is);

}  // namespace pmsfm

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace pmsfm {

/// T x d matrix of per-image tokens, one token per row.
using TokenGrid = Eigen::MatrixXd;
/// Spatial mean of a TokenGrid.
using GlobalToken = Eigen::RowVectorXd;

/// Projections of one pre-normalized multi-head attention layer. Tokens are
/// row vectors, so a projection is x * W.
struct AttentionLayer {
  Eigen::MatrixXd query, key, value, output;  // d x d each
  Eigen::RowVectorXd query_gain;              // pre-norm gain on the query side
  Eigen::RowVectorXd context_gain;            // pre-norm gain on the key/value side
};

struct AlignLevel {
  AttentionLayer self;   // across global tokens
  AttentionLayer cross;  // dense tokens -> global tokens
};

struct AlignWeights {
  int dim = 0;
  int heads = 1;
  std::vector<AlignLevel> levels;

  int num_levels() const { return static_cast<int>(levels.size()); }

  /// Gaussian projections with the given std, unit gains.
  static AlignWeights random(int dim, int heads, int num_levels, std::uint64_t seed, double stddev = 0.02);
  static AlignWeights zeros(int dim, int heads, int num_levels);
  static AlignWeights identity(int dim, int heads, int num_levels);
};

GlobalToken pool_global(const TokenGrid& f);

/// Row-wise RMS normalization scaled by gain.
Eigen::MatrixXd rms_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gain);

/// Numerically stable row-wise softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores);

/// Multi-head scaled dot-product attention on already projected q, k, v.
/// When `probabilities` is non-null it receives one Tq x Tk matrix per head.
Eigen::MatrixXd multi_head_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                                     int heads, std::vector<Eigen::MatrixXd>* probabilities = nullptr);

/// g + Attn(norm(g), norm(g)) over the N global tokens (one per row).
Eigen::MatrixXd global_self_attention(const Eigen::MatrixXd& globals, const AttentionLayer& layer, int heads);

/// f + Attn(norm(f), norm(g)): queries from the dense tokens, keys and values
/// from the N global tokens.
TokenGrid cross_attention(const TokenGrid& f, const Eigen::MatrixXd& globals, const AttentionLayer& layer, int heads);

struct ForwardStats {
  std::size_t peak_scalars = 0;
};

/// Full alignment: pool once, then for every level update the globals with
/// self-attention and every image with cross-attention; returns F0 + F_L.
/// Requires at least one level and grids of a common shape.
std::vector<TokenGrid> latent_align_forward(std::span<const TokenGrid> fs, const AlignWeights& w,
                                            ForwardStats* stats = nullptr);

/// Same as latent_align_forward but starting from caller-supplied level-0
/// global tokens (N x d) instead of pooling.
std::vector<TokenGrid> latent_align_forward_from_globals(std::span<const TokenGrid> fs,
                                                         const Eigen::MatrixXd& initial_globals,
                                                         const AlignWeights& w, ForwardStats* stats = nullptr);

struct ProbeRow {
  int n = 0;
  double time_ms = 0.0;
  std::size_t peak_scalars = 0;
};

struct QuadraticFit {
  double a = 0.0, b = 0.0, c = 0.0;  // y = a + b x + c x^2
  double r2 = 0.0;
};

struct ProbeConfig {
  std::vector<int> ns;
  int tokens = 16;
  int dim = 16;
  int heads = 8;
  int levels = 4;
  int reps = 3;
  std::uint64_t seed = 0;
};

/// Times the forward pass for every N (minimum over reps).
std::vector<ProbeRow> complexity_probe(const ProbeConfig& cfg);

QuadraticFit fit_quadratic(std::span<const double> x, std::span<const double> y);

/// `N,time_ms,peak_scalars` CSV.
void write_probe_csv(std::ostream& os, std::span<const ProbeRow> rows);

}  // namespace pmsfm

#include "pmsfm/latent_align.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include <Eigen/Dense>

#include "pmsfm/errors.h"
#include "pmsfm/seed.h"

namespace pmsfm {

namespace {

constexpr double kNormEps = 1e-6;

AttentionLayer make_layer(int dim, const auto& fill) {
  AttentionLayer l;
  l.query = fill(dim);
  l.key = fill(dim);
  l.value = fill(dim);
  l.output = fill(dim);
  l.query_gain = Eigen::RowVectorXd::Ones(dim);
  l.context_gain = Eigen::RowVectorXd::Ones(dim);
  return l;
}

AlignWeights make_weights(int dim, int heads, int num_levels, const auto& fill) {
  if (dim <= 0 || heads <= 0 || dim % heads != 0) throw InvalidArgument("token dimension must be divisible by heads");
  if (num_levels < 1) throw InvalidArgument("latent alignment needs at least one level");
  AlignWeights w;
  w.dim = dim;
  w.heads = heads;
  for (int l = 0; l < num_levels; ++l) w.levels.push_back({make_layer(dim, fill), make_layer(dim, fill)});
  return w;
}

// Live-scalar bookkeeping for the forward pass.
struct Tracker {
  std::size_t live = 0;
  std::size_t peak = 0;
  void alloc(std::size_t n) {
    live += n;
    peak = std::max(peak, live);
  }
  void release(std::size_t n) { live -= n; }
};

// Attention with keys/values already projected; returns the residual
// increment projected by the output matrix.
Eigen::MatrixXd attend(const Eigen::MatrixXd& queries_in, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                       const AttentionLayer& layer, int heads) {
  const Eigen::MatrixXd q = rms_norm(queries_in, layer.query_gain) * layer.query;
  return multi_head_attention(q, k, v, heads) * layer.output;
}

void check_layer(const AttentionLayer& layer, Eigen::Index dim) {
  if (layer.query.rows() != dim || layer.key.rows() != dim || layer.value.rows() != dim || layer.output.rows() != dim) {
    throw ShapeMismatch("attention projections do not match token dimension");
  }
}

}  // namespace

AlignWeights AlignWeights::random(int dim, int heads, int num_levels, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(derive_seed(seed, {0xa11}));
  std::normal_distribution<double> normal(0.0, stddev);
  return make_weights(dim, heads, num_levels, [&](int d) {
    Eigen::MatrixXd m(d, d);
    for (Eigen::Index c = 0; c < d; ++c)
      for (Eigen::Index r = 0; r < d; ++r) m(r, c) = normal(rng);
    return m;
  });
}

AlignWeights AlignWeights::zeros(int dim, int heads, int num_levels) {
  return make_weights(dim, heads, num_levels, [](int d) { return Eigen::MatrixXd::Zero(d, d).eval(); });
}

AlignWeights AlignWeights::identity(int dim, int heads, int num_levels) {
  return make_weights(dim, heads, num_levels, [](int d) { return Eigen::MatrixXd::Identity(d, d).eval(); });
}

GlobalToken pool_global(const TokenGrid& f) {
  if (f.rows() == 0) throw InvalidArgument("cannot pool an empty token grid");
  return f.colwise().mean();
}

Eigen::MatrixXd rms_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gain) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double rms = std::sqrt(x.row(r).squaredNorm() / static_cast<double>(x.cols()) + kNormEps);
    out.row(r) = x.row(r).cwiseProduct(gain) / rms;
  }
  return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    out.row(r) = (scores.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Eigen::MatrixXd multi_head_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                                     int heads, std::vector<Eigen::MatrixXd>* probabilities) {
  const Eigen::Index dim = q.cols();
  if (k.cols() != dim || v.cols() != dim || k.rows() != v.rows()) throw ShapeMismatch("attention operand shapes differ");
  if (heads <= 0 || dim % heads != 0) throw InvalidArgument("dimension not divisible by heads");
  const Eigen::Index head_dim = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Eigen::MatrixXd out(q.rows(), dim);
  if (probabilities) probabilities->clear();
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * head_dim, head_dim);
    const Eigen::MatrixXd p = softmax_rows(inv_sqrt * (q(Eigen::all, cols) * k(Eigen::all, cols).transpose()));
    out(Eigen::all, cols) = p * v(Eigen::all, cols);
    if (probabilities) probabilities->push_back(p);
  }
  return out;
}

Eigen::MatrixXd global_self_attention(const Eigen::MatrixXd& globals, const AttentionLayer& layer, int heads) {
  check_layer(layer, globals.cols());
  const Eigen::MatrixXd ctx = rms_norm(globals, layer.context_gain);
  return globals + attend(globals, ctx * layer.key, ctx * layer.value, layer, heads);
}

TokenGrid cross_attention(const TokenGrid& f, const Eigen::MatrixXd& globals, const AttentionLayer& layer, int heads) {
  if (f.cols() != globals.cols()) throw ShapeMismatch("token and global dimensions differ");
  check_layer(layer, f.cols());
  const Eigen::MatrixXd ctx = rms_norm(globals, layer.context_gain);
  return f + attend(f, ctx * layer.key, ctx * layer.value, layer, heads);
}

std::vector<TokenGrid> latent_align_forward_from_globals(std::span<const TokenGrid> fs,
                                                         const Eigen::MatrixXd& initial_globals,
                                                         const AlignWeights& w, ForwardStats* stats) {
  if (w.num_levels() < 1) throw InvalidArgument("latent alignment needs at least one level");
  if (fs.empty()) throw InvalidArgument("latent alignment needs at least one image");
  const Eigen::Index tokens = fs[0].rows();
  const Eigen::Index dim = fs[0].cols();
  for (const auto& f : fs) {
    if (f.rows() != tokens || f.cols() != dim) throw ShapeMismatch("token grids must share (T, d)");
  }
  if (dim != w.dim) throw ShapeMismatch("token dimension differs from weight dimension");
  const auto n = static_cast<Eigen::Index>(fs.size());
  if (initial_globals.rows() != n || initial_globals.cols() != dim) throw ShapeMismatch("initial globals must be N x d");

  const std::size_t grid = static_cast<std::size_t>(tokens * dim);
  const std::size_t nd = static_cast<std::size_t>(n * dim);
  const std::size_t heads = static_cast<std::size_t>(w.heads);
  Tracker mem;
  mem.alloc(grid * n);  // inputs
  mem.alloc(grid * n);  // working tokens
  mem.alloc(nd);        // globals

  std::vector<TokenGrid> current(fs.begin(), fs.end());
  Eigen::MatrixXd globals = initial_globals;
  for (const AlignLevel& level : w.levels) {
    // norm + q/k/v + head probabilities + output of the self-attention.
    mem.alloc(5 * nd + heads * n * n);
    globals = global_self_attention(globals, level.self, w.heads);
    mem.release(5 * nd + heads * n * n);

    check_layer(level.cross, dim);
    const Eigen::MatrixXd ctx = rms_norm(globals, level.cross.context_gain);
    const Eigen::MatrixXd keys = ctx * level.cross.key;
    const Eigen::MatrixXd values = ctx * level.cross.value;
    mem.alloc(3 * nd);
    for (auto& f : current) {
      mem.alloc(4 * grid + heads * tokens * n);
      f += attend(f, keys, values, level.cross, w.heads);
      mem.release(4 * grid + heads * tokens * n);
    }
    mem.release(3 * nd);
  }

  mem.alloc(grid * n);  // outputs
  for (Eigen::Index i = 0; i < n; ++i) current[i] += fs[i];
  if (stats) stats->peak_scalars = mem.peak;
  return current;
}

std::vector<TokenGrid> latent_align_forward(std::span<const TokenGrid> fs, const AlignWeights& w,
                                            ForwardStats* stats) {
  if (fs.empty()) throw InvalidArgument("latent alignment needs at least one image");
  Eigen::MatrixXd globals(static_cast<Eigen::Index>(fs.size()), fs[0].cols());
  for (std::size_t i = 0; i < fs.size(); ++i) {
    if (fs[i].cols() != fs[0].cols()) throw ShapeMismatch("token grids must share (T, d)");
    globals.row(static_cast<Eigen::Index>(i)) = pool_global(fs[i]);
  }
  return latent_align_forward_from_globals(fs, globals, w, stats);
}

std::vector<ProbeRow> complexity_probe(const ProbeConfig& cfg) {
  const AlignWeights w = AlignWeights::random(cfg.dim, cfg.heads, cfg.levels, cfg.seed);
  std::mt19937_64 rng(derive_seed(cfg.seed, {0x9b0be}));
  std::normal_distribution<double> normal;
  std::vector<ProbeRow> rows;
  for (int n : cfg.ns) {
    std::vector<TokenGrid> fs(n, TokenGrid(cfg.tokens, cfg.dim));
    for (auto& f : fs) f = f.unaryExpr([&](double) { return normal(rng); });
    ProbeRow row;
    row.n = n;
    row.time_ms = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, cfg.reps); ++r) {
      ForwardStats stats;
      const auto t0 = std::chrono::steady_clock::now();
      const auto out = latent_align_forward(fs, w, &stats);
      const auto t1 = std::chrono::steady_clock::now();
      row.time_ms = std::min(row.time_ms, std::chrono::duration<double, std::milli>(t1 - t0).count());
      row.peak_scalars = stats.peak_scalars;
    }
    rows.push_back(row);
  }
  return rows;
}

QuadraticFit fit_quadratic(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) throw InvalidArgument("quadratic fit needs at least 3 samples");
  const auto m = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd a(m, 3);
  Eigen::VectorXd b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    a(i, 0) = 1.0;
    a(i, 1) = x[i];
    a(i, 2) = x[i] * x[i];
    b(i) = y[i];
  }
  const Eigen::Vector3d coef = a.colPivHouseholderQr().solve(b);
  const double mean = b.mean();
  const double ss_tot = (b.array() - mean).square().sum();
  const double ss_res = (a * coef - b).squaredNorm();
  return {coef(0), coef(1), coef(2), ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0};
}

void write_probe_csv(std::ostream& os, std::span<const ProbeRow> rows) {
  os << "N,time_ms,peak_scalars\n";
  for (const auto& r : rows) os << r.n << ',' << r.time_ms << ',' << r.peak_scalars << '\n';
}

}  // namespace pmsfm

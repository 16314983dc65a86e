#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <vector>

#include "pmsfm/accumulate.h"
#include "pmsfm/errors.h"
#include "pmsfm/metrics.h"
#include "pmsfm/pipeline.h"
#include "test_support.h"

using namespace pmsfm;
using namespace pmsfm::testing;

namespace {

std::shared_ptr<const GroundTruthScene> make_scene(Trajectory traj, int n, std::uint64_t seed, int h = 24, int w = 32) {
  SynthConfig cfg;
  cfg.trajectory = traj;
  cfg.n = n;
  cfg.height = h;
  cfg.width = w;
  cfg.seed = seed;
  return std::make_shared<const GroundTruthScene>(synth_scene(cfg));
}

SimilarityMatrix flat_similarity(int n) { return SimilarityMatrix(Eigen::MatrixXd::Constant(n, n, 1.0)); }

SceneGraph random_tree(int n, std::mt19937_64& rng) {
  std::vector<int> order(n);
  for (int k = 0; k < n; ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> parent(n, -1);
  for (int k = 1; k < n; ++k) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    parent[order[k]] = order[pick(rng)];
  }
  return tree_from_parents(flat_similarity(n), order[0], parent);
}

SceneGraph chain_graph(int n) {
  std::vector<int> parent(n);
  for (int k = 0; k < n; ++k) parent[k] = k - 1;
  return tree_from_parents(flat_similarity(n), 0, parent);
}

// Largest deviation of a reconstruction from the GT expressed in the root frame.
double max_error_in_root_frame(const Reconstruction& r, const GroundTruthScene& scene) {
  const auto to_root = scene.images[r.root].pose.inverse();
  double worst = 0.0;
  for (int i = 0; i < r.size(); ++i) {
    const auto& gt = scene.images[i].points;
    for (std::size_t p = 0; p < gt.size(); ++p) {
      if (gt.valid(p)) worst = std::max(worst, (r.points[i][p] - to_root(gt[p])).norm());
    }
  }
  return worst;
}

// Serves pointmaps given in each camera's own frame together with explicit
// camera-to-camera transforms.
class HandBackend final : public DecoderBackend {
 public:
  HandBackend(std::vector<Pointmap> local, std::vector<RigidTransform> cam_to_world)
      : local_(std::move(local)), poses_(std::move(cam_to_world)) {}
  int size() const override { return static_cast<int>(local_.size()); }
  std::pair<int, int> shape(int i) const override { return {local_[i].height(), local_[i].width()}; }
  EdgeDecode decode(int i, int j) const override {
    EdgeDecode d;
    d.ref_points = local_[i];
    d.other_points = apply(compose(poses_[i].inverse(), poses_[j]), local_[j]);
    d.ref_conf = ConfidenceMap(local_[i].height(), local_[i].width(), 4.0);
    d.other_conf = ConfidenceMap(local_[j].height(), local_[j].width(), 4.0);
    return d;
  }

 private:
  std::vector<Pointmap> local_;
  std::vector<RigidTransform> poses_;
};

// Replaces a fixed pixel subset of every image with garbage at confidence 1.
class CorruptingBackend final : public DecoderBackend {
 public:
  explicit CorruptingBackend(const OracleBackend& inner) : inner_(inner) {}
  int size() const override { return inner_.size(); }
  std::pair<int, int> shape(int i) const override { return inner_.shape(i); }
  static bool corrupted(int image, std::size_t p) { return (p * 7 + image * 3) % 10 < 3; }
  EdgeDecode decode(int i, int j) const override {
    EdgeDecode d = inner_.decode(i, j);
    spoil(i, d.ref_points, d.ref_conf);
    spoil(j, d.other_points, d.other_conf);
    return d;
  }

 private:
  static void spoil(int image, Pointmap& pm, ConfidenceMap& conf) {
    for (std::size_t p = 0; p < pm.size(); ++p) {
      if (corrupted(image, p) && pm.valid(p)) {
        pm.set(p, Vec3(100.0 + p, -50.0, 3.0 * image));
        conf[p] = 1.0;
      }
    }
  }
  const OracleBackend& inner_;
};

Pointmap grid_points(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), z(2.0, 4.0);
  Pointmap p(h, w);
  for (std::size_t k = 0; k < p.size(); ++k) p.set(k, Vec3(u(rng), u(rng), z(rng)));
  return p;
}

RigidTransform rot_z(double deg, const Vec3& t) {
  return {Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, Vec3::UnitZ()).toRotationMatrix(), t, 1.0};
}

}  // namespace

TEST_CASE("confidence merge is the geometric mean") {
  ConfidenceMap a(2, 3, 1.0), b(2, 3, 9.0);
  CHECK(merge_confidence(a, b)[4] == doctest::Approx(3.0));
  const auto same = merge_confidence(b, b);
  for (std::size_t p = 0; p < same.size(); ++p) CHECK(same[p] == doctest::Approx(9.0).epsilon(1e-15));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1.0, 20.0);
  for (std::size_t p = 0; p < a.size(); ++p) {
    a[p] = u(rng);
    b[p] = u(rng);
  }
  const auto ab = merge_confidence(a, b), ba = merge_confidence(b, a);
  for (std::size_t p = 0; p < a.size(); ++p) CHECK(ab[p] == ba[p]);
  CHECK_THROWS_AS(merge_confidence(a, ConfidenceMap(3, 2)), ShapeMismatch);
}

TEST_CASE("symmetric fusion of consistent decodes is the forward decode") {
  const auto scene = make_scene(Trajectory::kOrbit, 4, 3);
  const OracleBackend oracle(scene, {0.0, 10.0, 1});
  const auto fwd = oracle.decode(1, 2), bwd = oracle.decode(2, 1);
  const auto fused = symmetric_fuse(fwd, bwd);
  for (std::size_t p = 0; p < fwd.ref_points.size(); ++p) {
    if (fwd.ref_points.valid(p)) CHECK((fused.ref_points[p] - fwd.ref_points[p]).norm() < 1e-9);
    if (fwd.other_points.valid(p)) CHECK((fused.other_points[p] - fwd.other_points[p]).norm() < 1e-9);
  }
}

TEST_CASE("symmetric fusion blends by log confidence") {
  const auto scene = make_scene(Trajectory::kOrbit, 4, 5);
  const OracleBackend oracle(scene, {0.02, 10.0, 2});
  auto fwd = oracle.decode(0, 1), bwd = oracle.decode(1, 0);
  for (auto* c : {&fwd.ref_conf, &fwd.other_conf, &bwd.ref_conf, &bwd.other_conf}) *c = ConfidenceMap(24, 32, 5.0);

  std::vector<Vec3> src, dst;
  for (std::size_t p = 0; p < fwd.ref_points.size(); ++p) {
    if (fwd.ref_points.valid(p) && bwd.other_points.valid(p)) {
      src.push_back(bwd.other_points[p]);
      dst.push_back(fwd.ref_points[p]);
    }
  }
  const std::vector<double> w(src.size(), 1.0);
  const auto to_i = horn_alignment(src, dst, w, false);
  const auto fused = symmetric_fuse(fwd, bwd);
  for (std::size_t p = 0; p < fwd.ref_points.size(); ++p) {
    if (fwd.other_points.valid(p) && bwd.ref_points.valid(p)) {
      const Vec3 mean = 0.5 * (fwd.other_points[p] + to_i(bwd.ref_points[p]));
      CHECK((fused.other_points[p] - mean).norm() < 1e-9);
    }
  }

  // A backward confidence of 1 carries no weight.
  bwd.ref_conf[40] = 1.0;
  const auto pinned = symmetric_fuse(fwd, bwd);
  if (fwd.other_points.valid(40)) CHECK((pinned.other_points[40] - fwd.other_points[40]).norm() < 1e-12);
}

TEST_CASE("hand-built star and chain compose their transforms") {
  std::mt19937_64 rng(9);
  std::vector<Pointmap> local{grid_points(rng, 4, 5), grid_points(rng, 4, 5), grid_points(rng, 4, 5)};
  const RigidTransform p0 = RigidTransform::Identity();
  const RigidTransform p1 = rot_z(90.0, Vec3(1, 0, 0));
  const RigidTransform p2 = rot_z(-30.0, Vec3(0, 2, 0.5));
  const HandBackend backend(local, {p0, p1, p2});

  SceneGraph star;
  star.n = 3;
  star.root = 0;
  star.edges = {{0, 1, 0.0}, {0, 2, 0.0}};
  SceneGraph chain;
  chain.n = 3;
  chain.root = 0;
  chain.edges = {{0, 1, 0.0}, {1, 2, 0.0}};
  for (const auto* g : {&star, &chain}) {
    const auto r = accumulate(*g, backend);
    CHECK(r.registered_count() == 3);
    for (int i = 0; i < 3; ++i) {
      // Camera i to root by hand: p0^-1 * p_i.
      const RigidTransform expected = compose(p0.inverse(), i == 0 ? p0 : i == 1 ? p1 : p2);
      for (std::size_t p = 0; p < local[i].size(); ++p) CHECK((r.points[i][p] - expected(local[i][p])).norm() < 1e-9);
    }
    REQUIRE(r.parent_frames[0]);
    if (g == &chain) {
      REQUIRE(r.parent_frames[1]);
      CHECK(rotation_distance(r.parent_frames[1]->rotation, p1.rotation) < 1e-9);
      CHECK((r.parent_frames[1]->translation - p1.translation).norm() < 1e-9);
    }
  }
}

TEST_CASE("noise-free accumulation is exact on any tree") {
  std::mt19937_64 rng(14);
  for (auto traj : {Trajectory::kOrbit, Trajectory::kForward, Trajectory::kRandomWander}) {
    const auto scene = make_scene(traj, 8, 21);
    const OracleBackend oracle(scene, {0.0, 10.0, 4});
    for (int trial = 0; trial < 3; ++trial) {
      const auto g = random_tree(8, rng);
      for (bool sym : {true, false}) {
        AccumulateOptions opts;
        opts.symmetrize = sym;
        const auto r = accumulate(g, oracle, opts);
        CHECK(r.registered_count() == 8);
        CHECK(max_error_in_root_frame(r, *scene) < 1e-9 * scene->scale);
      }
    }
  }
}

TEST_CASE("accumulation does not depend on the traversal on exact data") {
  const auto scene = make_scene(Trajectory::kOrbit, 10, 6);
  const OracleBackend oracle(scene, {0.0, 10.0, 2});
  const auto s = overlap_similarity(*scene);
  const auto a = accumulate(build_spt(s, 0), oracle);
  const auto b = accumulate(build_mst(s), oracle);
  const auto c = accumulate(chain_graph(10), oracle);
  for (int i = 0; i < 10; ++i) {
    for (std::size_t p = 0; p < a.points[i].size(); ++p) {
      if (!scene->images[i].points.valid(p)) continue;
      CHECK((a.points[i][p] - c.points[i][p]).norm() < 1e-9);
      if (b.root == a.root) CHECK((a.points[i][p] - b.points[i][p]).norm() < 1e-9);
    }
  }
}

TEST_CASE("drift grows with depth along a chain") {
  constexpr int kN = 10;
  std::vector<double> depth_error(kN, 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthConfig cfg;
    cfg.n = kN;
    cfg.height = 24;
    cfg.width = 32;
    cfg.orbit_arc_deg = 120.0;
    cfg.seed = seed;
    auto scene = std::make_shared<const GroundTruthScene>(synth_scene(cfg));
    const OracleBackend oracle(scene, {0.01, 10.0, seed});
    const auto r = accumulate(chain_graph(kN), oracle);
    const auto to_root = scene->images[0].pose.inverse();
    for (int i = 0; i < kN; ++i) {
      const auto& gt = scene->images[i].points;
      double ss = 0.0;
      for (std::size_t p = 0; p < gt.size(); ++p) {
        if (gt.valid(p) && r.points[i].valid(p)) ss += (r.points[i][p] - to_root(gt[p])).squaredNorm();
      }
      depth_error[i] += std::sqrt(ss / gt.valid_count()) / scene->scale;
    }
  }
  std::vector<double> depth(kN);
  for (int i = 0; i < kN; ++i) depth[i] = i;
  CHECK(depth_error[kN - 1] > depth_error[1]);
  CHECK(spearman(depth, depth_error) > 0.8);
}

TEST_CASE("unit-confidence corruption cannot disturb registration") {
  const auto scene = make_scene(Trajectory::kOrbit, 6, 8);
  const OracleBackend oracle(scene, {0.0, 10.0, 5});
  const CorruptingBackend backend(oracle);
  const auto s = overlap_similarity(*scene);
  const auto g = build_spt(s, select_root(s));
  for (bool sym : {true, false}) {
    AccumulateOptions opts;
    opts.symmetrize = sym;
    const auto r = accumulate(g, backend, opts);
    const auto to_root = scene->images[r.root].pose.inverse();
    double worst = 0.0;
    for (int i = 0; i < 6; ++i) {
      const auto& gt = scene->images[i].points;
      for (std::size_t p = 0; p < gt.size(); ++p) {
        if (gt.valid(p) && !CorruptingBackend::corrupted(i, p)) worst = std::max(worst, (r.points[i][p] - to_root(gt[p])).norm());
      }
    }
    CHECK(worst < 1e-9 * scene->scale);
  }
}

TEST_CASE("chunking and threading do not change the result") {
  const auto scene = make_scene(Trajectory::kRandomWander, 9, 2);
  const OracleBackend oracle(scene, {0.02, 10.0, 7});
  const auto g = build_mst(overlap_similarity(*scene));
  AccumulateOptions serial;
  serial.chunk = 1000;
  serial.threads = 1;
  AccumulateOptions chunked;
  chunked.chunk = 2;
  chunked.threads = 4;
  const auto a = accumulate(g, oracle, serial), b = accumulate(g, oracle, chunked);
  for (int i = 0; i < 9; ++i) {
    REQUIRE(a.registered[i] == b.registered[i]);
    for (std::size_t p = 0; p < a.points[i].size(); ++p) {
      CHECK(a.points[i].valid(p) == b.points[i].valid(p));
      if (a.points[i].valid(p)) CHECK(a.points[i][p] == b.points[i][p]);
      CHECK(a.confidence[i][p] == b.confidence[i][p]);
    }
  }
  AccumulateOptions bad;
  bad.chunk = 0;
  CHECK_THROWS_AS(accumulate(g, oracle, bad), InvalidArgument);
}

TEST_CASE("noisy orbit keeps every relative pose within five degrees") {
  const auto scene = make_scene(Trajectory::kOrbit, 25, 11, 48, 64);
  const OracleBackend oracle(scene, {0.01, 10.0, 11});
  const auto r = run_pipeline(oracle, scene_embeddings(*scene), scene.get(), {});
  const std::vector<double> taus{5.0};
  const auto report = evaluate_poses(pose_set(r.poses), pose_set(*scene), taus);
  CHECK(report.rra[0] == 100.0);
  CHECK(report.rta[0] == 100.0);
}

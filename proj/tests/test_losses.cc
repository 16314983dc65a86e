#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "pmsfm/accumulate.h"
#include "pmsfm/errors.h"
#include "pmsfm/losses.h"
#include "test_support.h"

using namespace pmsfm;
using namespace pmsfm::testing;

namespace {

GroundTruthScene small_scene(int n, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n = n;
  cfg.height = 16;
  cfg.width = 20;
  cfg.seed = seed;
  return synth_scene(cfg);
}

SceneGraph chain(int n) {
  SceneGraph g;
  g.n = n;
  for (int k = 0; k + 1 < n; ++k) g.edges.push_back({k, k + 1, 0.0});
  return g;
}

EdgeDecodes exact_decodes(const GroundTruthScene& scene, const SceneGraph& g) {
  EdgeDecodes d;
  const OracleNoise none{0.0, 0.0, 0};
  for (const auto& e : g.edges) d[{e.parent, e.child}] = oracle_decode(scene, e.parent, e.child, none);
  return d;
}

Reconstruction gt_reconstruction(const GroundTruthScene& scene, const RigidTransform& frame) {
  Reconstruction r;
  for (const auto& v : scene.images) {
    r.points.push_back(apply(frame, v.points));
    r.confidence.emplace_back(v.points.height(), v.points.width(), 1.0);
    r.registered.push_back(true);
  }
  return r;
}

}  // namespace

TEST_CASE("confidence loss closed forms") {
  Pointmap gt(2, 2), pred(2, 2);
  for (std::size_t p = 0; p < 4; ++p) {
    gt.set(p, Vec3(p, 1, 2));
    pred.set(p, gt[p]);
  }
  const ConfidenceMap ones(2, 2, 1.0);
  CHECK(conf_loss(gt, pred, ones, 0.2).value == doctest::Approx(-0.8));

  Pointmap g1(1, 1), p1(1, 1);
  g1.set(0, Vec3::Zero());
  p1.set(0, Vec3(3, 4, 0));
  ConfidenceMap c1(1, 1, 2.5);
  const auto lin = conf_loss(g1, p1, c1, 0.2);
  CHECK(lin.value == doctest::Approx(2.5 * 5.0 - 0.2 * 2.5));
  CHECK(lin.grad_conf[0] == doctest::Approx(5.0 - 0.2));
  CHECK((lin.grad_points[0] - 2.5 * Vec3(0.6, 0.8, 0.0)).norm() < 1e-12);
  const auto lg = conf_loss(g1, p1, c1, 0.2, Regularizer::kLog);
  CHECK(lg.value == doctest::Approx(2.5 * 5.0 - 0.2 * std::log(2.5)));
  CHECK(lg.grad_conf[0] == doctest::Approx(5.0 - 0.2 / 2.5));

  CHECK_THROWS_AS(conf_loss(gt, p1, c1, 0.2), ShapeMismatch);
  CHECK_THROWS_AS(conf_loss(gt, pred, ones, 0.0), InvalidArgument);
}

TEST_CASE("confidence loss gradients match finite differences") {
  std::mt19937_64 rng(77);
  for (int k = 0; k < 10; ++k) {
    CHECK(loss_gradient_error(rng, Regularizer::kLinear) < 1e-4);
    CHECK(loss_gradient_error(rng, Regularizer::kLog) < 1e-4);
  }
}

TEST_CASE("pairwise loss of exact decodes") {
  const auto scene = small_scene(3, 1);
  const auto g = chain(3);
  auto decodes = exact_decodes(scene, g);
  const LossConfig cfg;
  double pixels = 0.0;
  for (const auto& e : g.edges) {
    pixels += scene.images[e.parent].points.valid_count() + scene.images[e.child].points.valid_count();
  }
  CHECK(pairwise_loss(scene, decodes, g, cfg) == doctest::Approx(-cfg.alpha * pixels).epsilon(1e-9));

  // Unit confidences make the loss linear in a single-pixel displacement.
  for (auto& [key, d] : decodes) {
    d.ref_conf = ConfidenceMap(16, 20, 1.0);
    d.other_conf = ConfidenceMap(16, 20, 1.0);
  }
  const double base = pairwise_loss(scene, decodes, g, cfg);
  auto& other = decodes.at({0, 1}).other_points;
  std::size_t p = 0;
  while (!other.valid(p)) ++p;
  const Vec3 delta(0.01, -0.02, 0.005);
  other.set(p, other[p] + delta);
  CHECK(pairwise_loss(scene, decodes, g, cfg) - base == doctest::Approx(delta.norm()).epsilon(1e-6));

  std::vector<EdgeLoss> per_edge;
  const double total = pairwise_loss(scene, decodes, g, cfg, &per_edge);
  double independent = 0.0;
  for (const auto& e : g.edges) {
    const auto to_frame = scene.images[e.parent].pose.inverse();
    const auto& d = decodes.at({e.parent, e.child});
    independent += conf_loss(apply(to_frame, scene.images[e.parent].points), d.ref_points, d.ref_conf, cfg.alpha).value;
    independent += conf_loss(apply(to_frame, scene.images[e.child].points), d.other_points, d.other_conf, cfg.alpha).value;
  }
  CHECK(total == doctest::Approx(independent).epsilon(1e-12));
  REQUIRE(per_edge.size() == 2);
  CHECK(per_edge[0].value + per_edge[1].value == doctest::Approx(total));

  decodes.erase({1, 2});
  CHECK_THROWS_AS(pairwise_loss(scene, decodes, g, cfg), MissingEdge);
}

TEST_CASE("global loss removes the reconstruction frame") {
  const auto scene = small_scene(3, 2);
  std::mt19937_64 rng(3);
  const RigidTransform frame{random_rotation(rng), random_vec(rng), 1.0};
  const auto recon = gt_reconstruction(scene, frame);
  LossConfig cfg;
  double rms = 1.0;
  double pixels = 0.0;
  for (const auto& v : scene.images) pixels += v.points.valid_count();
  CHECK(global_loss(scene, recon, cfg, nullptr, &rms) == doctest::Approx(-cfg.alpha * pixels).epsilon(1e-9));
  CHECK(rms < 1e-9);

  const RigidTransform scaled{frame.rotation, frame.translation, 2.0};
  const auto big = gt_reconstruction(scene, scaled);
  global_loss(scene, big, cfg, nullptr, &rms);
  CHECK(rms > 1e-3);
  cfg.mode = AlignMode::kSimilarity;
  global_loss(scene, big, cfg, nullptr, &rms);
  CHECK(rms < 1e-9);
}

TEST_CASE("global loss skips sparse and unregistered images") {
  auto scene = small_scene(3, 4);
  auto& sparse = scene.images[2].points;
  std::size_t kept = 0;
  for (std::size_t p = 0; p < sparse.size(); ++p) {
    if (sparse.valid(p) && kept < 99) {
      ++kept;
    } else {
      sparse.invalidate(p);
    }
  }
  REQUIRE(sparse.valid_count() == 99);
  const auto recon = gt_reconstruction(scene, RigidTransform::Identity());
  LossConfig cfg;
  std::vector<ImageLoss> per_image;
  const double v = global_loss(scene, recon, cfg, &per_image);
  CHECK(per_image[2].skipped);
  CHECK(per_image[2].value == 0.0);
  const double expected = -cfg.alpha * (scene.images[0].points.valid_count() + scene.images[1].points.valid_count());
  CHECK(v == doctest::Approx(expected).epsilon(1e-9));

  auto partial = recon;
  partial.registered[1] = false;
  global_loss(scene, partial, cfg, &per_image);
  CHECK(per_image[1].skipped);
}

TEST_CASE("total loss arithmetic") {
  CHECK(total_loss(3.0, 100.0, 0.0) == 3.0);
  CHECK(total_loss(10.0, -5.0, 0.1) == doctest::Approx(9.5));
  CHECK(total_loss(4.0, 4.0, 1.0) == doctest::Approx(8.0));
  CHECK_THROWS_AS(total_loss(1.0, 1.0, -0.5), InvalidArgument);
}

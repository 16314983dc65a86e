#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "pmsfm/backend.h"
#include "pmsfm/errors.h"
#include "pmsfm/io.h"
#include "pmsfm/scene_graph.h"
#include "test_support.h"

using namespace pmsfm;
using namespace pmsfm::testing;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pmsfm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

bool same_bits(const Pointmap& a, const Pointmap& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t p = 0; p < a.size(); ++p) {
    if (a.valid(p) != b.valid(p)) return false;
    if (a.valid(p) && a[p] != b[p]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("rendered points reproject onto their own pixel centers") {
  for (auto traj : {Trajectory::kOrbit, Trajectory::kForward, Trajectory::kRandomWander}) {
    SynthConfig cfg;
    cfg.trajectory = traj;
    cfg.n = 4;
    cfg.seed = 7;
    const auto scene = synth_scene(cfg);
    double worst = 0.0;
    std::size_t valid = 0, total = 0;
    for (const auto& view : scene.images) {
      const auto to_cam = view.pose.inverse();
      for (int v = 0; v < view.points.height(); ++v) {
        for (int u = 0; u < view.points.width(); ++u) {
          const auto p = view.points.index(u, v);
          ++total;
          if (!view.points.valid(p)) continue;
          ++valid;
          const Vec2 px = view.intrinsics.project(to_cam(view.points[p]));
          worst = std::max(worst, (px - Vec2(u, v)).norm());
        }
      }
    }
    CHECK(worst < 1e-6);
    CHECK(static_cast<double>(valid) / total > 0.8);
  }
}

TEST_CASE("synthetic scenes are deterministic and validate their config") {
  SynthConfig cfg;
  cfg.n = 3;
  cfg.seed = 12;
  const auto a = synth_scene(cfg), b = synth_scene(cfg);
  for (int i = 0; i < 3; ++i) CHECK(same_bits(a.images[i].points, b.images[i].points));
  cfg.n = 1;
  CHECK_THROWS_AS(synth_scene(cfg), InvalidArgument);
  cfg.n = 2;
  cfg.width = 8;
  CHECK_THROWS_AS(synth_scene(cfg), InvalidArgument);
  CHECK(parse_trajectory(to_string(Trajectory::kForward)) == Trajectory::kForward);
}

TEST_CASE("zero-radius orbit duplicates the view") {
  SynthConfig cfg;
  cfg.n = 2;
  cfg.orbit_radius = 0.0;
  cfg.invalid_fraction = 0.0;
  const auto scene = synth_scene(cfg);
  CHECK(same_bits(scene.images[0].points, scene.images[1].points));
  CHECK(scene.scale > 0.0);
}

TEST_CASE("forward trajectory overlap decays with distance") {
  SynthConfig cfg;
  cfg.trajectory = Trajectory::kForward;
  cfg.n = 50;
  cfg.height = 24;
  cfg.width = 32;
  const auto scene = synth_scene(cfg);
  const auto s = overlap_similarity(scene);
  for (int i = 0; i + 1 < cfg.n; ++i) {
    CHECK(s(i, i + 1) > s(0, cfg.n - 1));
    CHECK(scene.images[i + 1].pose.translation.z() > scene.images[i].pose.translation.z());
  }
}

TEST_CASE("noise-free oracle decodes are exact") {
  SynthConfig cfg;
  cfg.n = 3;
  cfg.seed = 2;
  const auto scene = synth_scene(cfg);
  const OracleNoise noise{0.0, 10.0, 1};
  const auto d = oracle_decode(scene, 1, 2, noise);
  const auto to_cam = scene.images[1].pose.inverse();
  const auto& gi = scene.images[1].points;
  const auto& gj = scene.images[2].points;
  for (std::size_t p = 0; p < gi.size(); ++p) {
    REQUIRE(d.ref_points.valid(p) == gi.valid(p));
    if (gi.valid(p)) CHECK((d.ref_points[p] - to_cam(gi[p])).norm() < 1e-12);
    if (gj.valid(p)) CHECK((d.other_points[p] - to_cam(gj[p])).norm() < 1e-12);
    if (gi.valid(p)) CHECK(d.ref_conf[p] == 11.0);
    if (gj.valid(p)) CHECK(d.other_conf[p] == 11.0);
  }
  CHECK_THROWS_AS(oracle_decode(scene, 1, 1, noise), InvalidArgument);
}

TEST_CASE("oracle decode at an identity root is verbatim") {
  GroundTruthScene scene;
  for (int c = 0; c < 2; ++c) {
    GroundTruthView v;
    v.points = Pointmap(2, 2);
    for (std::size_t p = 0; p < 4; ++p) v.points.set(p, Vec3(0.1 * p, 0.3 * c, 2.0 + p));
    v.pose.translation = Vec3(c, 0, 0);
    scene.images.push_back(v);
  }
  const auto d = oracle_decode(scene, 0, 1, {});
  for (std::size_t p = 0; p < 4; ++p) CHECK(d.ref_points[p] == scene.images[0].points[p]);
}

TEST_CASE("oracle noise matches its nominal magnitude") {
  SynthConfig cfg;
  cfg.n = 2;
  cfg.height = 72;
  cfg.width = 96;
  cfg.seed = 5;
  const auto scene = synth_scene(cfg);
  const OracleNoise noise{0.01, 10.0, 3};
  const auto d = oracle_decode(scene, 0, 1, noise);
  const auto to_cam = scene.images[0].pose.inverse();
  double ss = 0.0;
  std::size_t count = 0;
  std::vector<double> err, conf;
  for (const auto* pair : {&d.ref_points, &d.other_points}) {
    const auto& gt = pair == &d.ref_points ? scene.images[0].points : scene.images[1].points;
    const auto& c = pair == &d.ref_points ? d.ref_conf : d.other_conf;
    for (std::size_t p = 0; p < gt.size(); ++p) {
      if (!gt.valid(p)) continue;
      const double e = ((*pair)[p] - to_cam(gt[p])).norm();
      ss += e * e;
      ++count;
      err.push_back(e);
      conf.push_back(c[p]);
      CHECK(c[p] >= 1.0);
      CHECK(c[p] <= 11.0);
    }
  }
  REQUIRE(count >= 10000);
  const double rms = std::sqrt(ss / count);
  const double expected = 0.01 * scene.scale * std::sqrt(3.0);
  CHECK(std::abs(rms - expected) < 0.05 * expected);
  // Confidence must fall as the sampled error grows.
  for (double& e : err) e = -e;
  CHECK(spearman(err, conf) > 0.9);

  const auto again = oracle_decode(scene, 0, 1, noise);
  CHECK(same_bits(again.ref_points, d.ref_points));
  CHECK(same_bits(again.other_points, d.other_points));
}

TEST_CASE("file backend serves stored decodes") {
  SynthConfig cfg;
  cfg.n = 3;
  cfg.height = 16;
  cfg.width = 20;
  auto scene = std::make_shared<const GroundTruthScene>(synth_scene(cfg));
  const OracleBackend oracle(scene, {0.01, 10.0, 8});
  const auto dir = scratch_dir("file_backend");
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j && !(i == 2 && j == 0)) write_edge_file(dir / edge_filename(i, j), oracle.decode(i, j));
    }
  }
  const auto backend = load_pointmaps(dir);
  REQUIRE(backend->size() == 3);
  CHECK(backend->shape(1) == std::pair<int, int>{16, 20});
  // Grids are stored as float32: a reload equals the float-rounded decode
  // and a second write/read cycle is bit-identical.
  const auto a = oracle.decode(0, 1), b = backend->decode(0, 1);
  for (std::size_t p = 0; p < a.ref_points.size(); ++p) {
    REQUIRE(a.ref_points.valid(p) == b.ref_points.valid(p));
    if (a.ref_points.valid(p)) CHECK(b.ref_points[p] == a.ref_points[p].cast<float>().cast<double>());
    CHECK(static_cast<double>(static_cast<float>(a.ref_conf[p])) == b.ref_conf[p]);
  }
  write_edge_file(dir / "copy.lpmf", b);
  const auto c = read_edge_file(dir / "copy.lpmf");
  CHECK(same_bits(b.ref_points, c.ref_points));
  CHECK(same_bits(b.other_points, c.other_points));
  CHECK_THROWS_AS(backend->decode(2, 0), MissingEdge);

  const auto path = dir / edge_filename(1, 2);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 7);
  CHECK_THROWS_AS(backend->decode(1, 2), FormatError);
  std::filesystem::remove_all(dir);
}

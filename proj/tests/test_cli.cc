#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "cli_support.h"
#include "pmsfm/io.h"

using namespace pmsfm;
using namespace pmsfm::testing;
namespace fs = std::filesystem;

TEST_CASE("synth is deterministic") {
  const auto root = fresh_dir("cli_synth");
  REQUIRE(run_cli("synth --n 8 --seed 1 --size 24x32 --out " + (root / "a").string()) == 0);
  REQUIRE(run_cli("synth --n 8 --seed 1 --size 24x32 --out " + (root / "b").string()) == 0);
  const auto a = snapshot(root / "a"), b = snapshot(root / "b");
  CHECK(a.size() >= 8 + 4);
  CHECK(a == b);
  fs::remove_all(root);
}

TEST_CASE("usage errors exit with status 1") {
  const auto root = fresh_dir("cli_usage");
  CHECK(run_cli("synth --n 1 --out " + root.string()) == 1);
  CHECK(run_cli("synth --n 4 --traj spiral --out " + root.string()) == 1);
  CHECK(run_cli("reconstruct --out " + root.string()) == 1);
  CHECK(run_cli("reconstruct --input " + (root / "missing").string() + " --out " + (root / "o").string()) == 2);
  fs::remove_all(root);
}

TEST_CASE("forward trajectory writes monotone poses") {
  const auto root = fresh_dir("cli_forward");
  REQUIRE(run_cli("synth --n 50 --traj forward --size 16x16 --out " + root.string()) == 0);
  const auto poses = read_poses_file(root / "gt_poses.txt");
  REQUIRE(poses.size() == 50);
  for (std::size_t k = 1; k < poses.size(); ++k) {
    CHECK(poses[k].pose.translation.z() > poses[k - 1].pose.translation.z());
  }
  fs::remove_all(root);
}

TEST_CASE("eval matches ids by key") {
  const auto root = fresh_dir("cli_eval");
  REQUIRE(run_cli("synth --n 6 --seed 3 --size 24x32 --out " + root.string()) == 0);
  const auto gt = root / "gt_poses.txt";
  REQUIRE(run_cli("eval --pred " + gt.string() + " --gt " + gt.string() + " --format keys", root / "same.txt") == 0);
  const auto same = read_keys(root / "same.txt");
  CHECK(same.at("rra@5") == 100.0);
  CHECK(same.at("rta@5") == 100.0);
  CHECK(same.at("ate") < 1e-9);
  CHECK(same.at("reg") == 100.0);

  auto records = read_poses_file(gt);
  std::mt19937_64 rng(2);
  std::shuffle(records.begin(), records.end(), rng);
  write_poses_file(root / "shuffled.txt", records);
  REQUIRE(run_cli("eval --pred " + (root / "shuffled.txt").string() + " --gt " + gt.string() + " --format keys",
                  root / "shuffled_report.txt") == 0);
  CHECK(read_keys(root / "shuffled_report.txt") == same);

  records.pop_back();
  write_poses_file(root / "partial.txt", records);
  REQUIRE(run_cli("eval --pred " + (root / "partial.txt").string() + " --gt " + gt.string() + " --format keys",
                  root / "partial_report.txt") == 0);
  const auto partial = read_keys(root / "partial_report.txt");
  CHECK(partial.at("reg") < 100.0);
  CHECK(partial.at("rra@5") < 100.0);
  fs::remove_all(root);
}

TEST_CASE("noise-free reconstruction scores perfectly") {
  const auto root = fresh_dir("cli_exact");
  REQUIRE(run_cli("synth --n 10 --seed 4 --size 32x48 --out " + (root / "scene").string()) == 0);
  REQUIRE(run_cli("reconstruct --input " + (root / "scene").string() + " --graph spt --out " + (root / "rec").string()) == 0);
  for (const char* f : {"poses.txt", "graph.txt", "cloud.ply", "run.cfg", "report.txt", "timing.txt"}) {
    CHECK(fs::exists(root / "rec" / f));
  }
  CHECK(fs::exists(root / "rec" / "pointmaps" / "0.lpmf"));
  REQUIRE(run_cli("eval --pred " + (root / "rec" / "poses.txt").string() + " --gt " +
                      (root / "scene" / "gt_poses.txt").string() + " --format keys",
                  root / "report.txt") == 0);
  const auto r = read_keys(root / "report.txt");
  CHECK(r.at("rra@5") == 100.0);
  CHECK(r.at("rta@5") == 100.0);
  CHECK(r.at("reg") == 100.0);
  CHECK(r.at("ate") < 1e-6);

  REQUIRE(run_cli("eval --loss --scene " + (root / "scene").string() + " --recon " + (root / "rec").string(),
                  root / "loss.json") == 0);
  CHECK(read_file(root / "loss.json").find("\"total\"") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("stored edge decodes drive reconstruction") {
  const auto root = fresh_dir("cli_edges");
  REQUIRE(run_cli("synth --n 5 --seed 6 --size 24x32 --noise 0.005 --dump-edges --out " + (root / "scene").string()) == 0);
  CHECK(fs::exists(root / "scene" / "edges" / "edge_0_1.lpmf"));
  REQUIRE(run_cli("reconstruct --input " + (root / "scene").string() + " --graph mst --out " + (root / "rec").string()) == 0);
  const auto poses = read_poses_file(root / "rec" / "poses.txt");
  CHECK(poses.size() == 5);
  fs::remove_all(root);
}

TEST_CASE("end-to-end runs are byte-identical") {
  const auto root = fresh_dir("cli_determinism");
  std::vector<std::map<std::string, std::string>> runs;
  const auto scene = root / "scene", rec = root / "rec";
  for (int k = 0; k < 2; ++k) {
    REQUIRE(run_cli("synth --n 8 --seed 9 --size 24x32 --noise 0.01 --out " + scene.string()) == 0);
    REQUIRE(run_cli("reconstruct --input " + scene.string() + " --seed 5 --out " + rec.string()) == 0);
    REQUIRE(run_cli("eval --pred " + (rec / "poses.txt").string() + " --gt " + (scene / "gt_poses.txt").string() +
                        " --format both",
                    rec / "eval.txt") == 0);
    auto files = snapshot(rec, "timing.txt");
    for (auto& [name, bytes] : snapshot(scene)) files["scene/" + name] = bytes;
    runs.push_back(std::move(files));
    fs::remove_all(scene);
    fs::remove_all(rec);
  }
  CHECK(runs[0].size() > 5);
  CHECK(runs[0] == runs[1]);
  fs::remove_all(root);
}

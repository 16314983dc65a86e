#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "kv_file.h"
#include "pmsfm/accumulate.h"
#include "pmsfm/backend.h"
#include "pmsfm/errors.h"
#include "pmsfm/io.h"
#include "pmsfm/latent_align.h"
#include "pmsfm/losses.h"
#include "pmsfm/metrics.h"
#include "pmsfm/pipeline.h"
#include "pmsfm/scene_graph.h"

namespace fs = std::filesystem;
using namespace pmsfm;
using pmsfm::cli::format_double;
using pmsfm::cli::KeyValues;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

struct SynthArgs {
  int n = 8;
  std::string size = "48x64";
  std::string traj = "orbit";
  double noise = 0.0;
  std::uint64_t seed = 0;
  double orbit_arc = 360.0;
  bool dump_edges = false;
  std::string out;
};

struct ReconstructArgs {
  std::string input;
  std::string graph = "spt";
  double conf_thr = 3.0;
  bool no_symmetrize = false;
  bool sim3 = false;
  int chunk = 32;
  int align_layers = 4;
  int threads = 0;
  std::uint64_t seed = 0;
  std::string out;
};

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string pred_cloud;
  std::string gt_cloud;
  std::vector<double> thresholds{5.0, 15.0, 30.0};
  std::string format = "both";
  bool loss = false;
  std::string scene;
  std::string recon;
  double alpha = 0.2;
  double lambda = 0.1;
  std::string regularizer = "linear";
};

struct ProbeArgs {
  std::vector<int> ns{64, 128, 256};
  int tokens = 16;
  int dim = 16;
  int heads = 8;
  int levels = 1;
  int reps = 3;
  std::uint64_t seed = 0;
  std::string out;
};

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw CLI::ValidationError("--size", "expected HxW");
  try {
    std::size_t used_h = 0, used_w = 0;
    const int h = std::stoi(s.substr(0, x), &used_h);
    const int w = std::stoi(s.substr(x + 1), &used_w);
    if (used_h != x || used_w != s.size() - x - 1 || h < 16 || w < 16) throw std::invalid_argument(s);
    return {h, w};
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("--size", "expected HxW with H, W >= 16");
  }
}

SynthConfig synth_config(const KeyValues& kv) {
  SynthConfig c;
  c.n = std::stoi(cli::require(kv, "n"));
  std::tie(c.height, c.width) = parse_size(cli::require(kv, "size"));
  c.trajectory = parse_trajectory(cli::require(kv, "traj"));
  c.seed = std::stoull(cli::require(kv, "seed"));
  c.orbit_arc_deg = std::stod(cli::require(kv, "orbit_arc"));
  return c;
}

// Scene plus its decoder: stored edge files when present, the oracle otherwise.
struct LoadedScene {
  std::shared_ptr<GroundTruthScene> scene;
  std::unique_ptr<DecoderBackend> backend;
  KeyValues cfg;
};

LoadedScene load_scene(const fs::path& dir) {
  LoadedScene s;
  s.cfg = cli::read_kv(dir / "scene.cfg");
  s.scene = std::make_shared<GroundTruthScene>(synth_scene(synth_config(s.cfg)));
  if (fs::is_directory(dir / "edges")) {
    s.backend = load_pointmaps(dir / "edges");
    if (s.backend->size() != s.scene->size()) throw FormatError("edge files do not cover every image");
  } else {
    OracleNoise noise;
    noise.sigma = std::stod(cli::require(s.cfg, "noise"));
    noise.seed = s.scene->seed;
    s.backend = std::make_unique<OracleBackend>(s.scene, noise);
  }
  return s;
}

std::vector<PoseRecord> pose_records(const PoseSet& poses, const std::vector<double>& focals) {
  std::vector<PoseRecord> out;
  for (int i = 0; i < poses.size(); ++i) {
    if (poses.poses[i]) out.push_back({i, *poses.poses[i], focals[i]});
  }
  return out;
}

int run_synth(const SynthArgs& a) {
  SynthConfig c;
  c.n = a.n;
  std::tie(c.height, c.width) = parse_size(a.size);
  c.trajectory = parse_trajectory(a.traj);
  c.seed = a.seed;
  c.orbit_arc_deg = a.orbit_arc;
  const auto scene = std::make_shared<GroundTruthScene>(synth_scene(c));

  const fs::path out(a.out);
  fs::create_directories(out / "gt");
  cli::write_kv(out / "scene.cfg", {{"n", std::to_string(c.n)},
                                    {"size", std::to_string(c.height) + "x" + std::to_string(c.width)},
                                    {"traj", to_string(c.trajectory)},
                                    {"noise", format_double(a.noise)},
                                    {"seed", std::to_string(c.seed)},
                                    {"orbit_arc", format_double(c.orbit_arc_deg)}});

  std::vector<double> focals;
  std::vector<Vec3> cloud;
  for (int i = 0; i < scene->size(); ++i) {
    const auto& v = scene->images[i];
    focals.push_back(v.intrinsics.fx);
    write_lpmf_file(out / "gt" / (std::to_string(i) + ".lpmf"), v.points, nullptr);
    for (std::size_t p = 0; p < v.points.size(); ++p) {
      if (v.points.valid(p)) cloud.push_back(v.points[p]);
    }
  }
  write_poses_file(out / "gt_poses.txt", pose_records(pose_set(*scene), focals));
  write_ply(out / "gt_cloud.ply", cloud, std::vector<double>(cloud.size(), 1.0));
  write_embeddings(out / "embeddings.lemb", scene_embeddings(*scene));

  if (a.dump_edges) {
    fs::create_directories(out / "edges");
    const OracleBackend backend(scene, {a.noise, 10.0, scene->seed});
    for (int i = 0; i < scene->size(); ++i) {
      for (int j = 0; j < scene->size(); ++j) {
        if (i != j) write_edge_file(out / "edges" / edge_filename(i, j), backend.decode(i, j));
      }
    }
  }
  std::cout << "wrote " << scene->size() << " views to " << out.string() << '\n';
  return 0;
}

int run_reconstruct(const ReconstructArgs& a) {
  const fs::path in(a.input);
  const fs::path out(a.out);
  LoadedScene loaded = load_scene(in);
  const auto embeddings = read_embeddings(in / "embeddings.lemb");

  PipelineOptions opts;
  opts.graph = parse_graph_kind(a.graph);
  opts.accumulate.symmetrize = !a.no_symmetrize;
  opts.accumulate.mode = a.sim3 ? AlignMode::kSimilarity : AlignMode::kRigid;
  opts.accumulate.chunk = a.chunk;
  opts.accumulate.threads = a.threads;
  opts.pnp.conf_threshold = a.conf_thr;
  opts.pnp.seed = a.seed;
  opts.align_layers = a.align_layers;
  opts.seed = a.seed;
  const PipelineResult r = run_pipeline(*loaded.backend, embeddings, loaded.scene.get(), opts);

  fs::create_directories(out / "pointmaps");
  std::vector<double> focals;
  for (const auto& p : r.poses.poses) focals.push_back(p.focal);
  write_poses_file(out / "poses.txt", pose_records(pose_set(r.poses), focals));
  {
    std::ofstream g(out / "graph.txt");
    write_graph(g, r.graph);
  }
  std::vector<Vec3> cloud;
  std::vector<double> conf;
  for (int i = 0; i < r.recon.size(); ++i) {
    if (!r.recon.registered[i]) continue;
    const Pointmap& pm = r.recon.points[i];
    write_lpmf_file(out / "pointmaps" / (std::to_string(i) + ".lpmf"), pm, &r.recon.confidence[i]);
    for (std::size_t p = 0; p < pm.size(); ++p) {
      if (!pm.valid(p)) continue;
      cloud.push_back(pm[p]);
      conf.push_back(r.recon.confidence[i][p]);
    }
  }
  write_ply(out / "cloud.ply", cloud, conf);

  cli::write_kv(out / "run.cfg", {{"input", a.input},
                                  {"graph", a.graph},
                                  {"conf-thr", format_double(a.conf_thr)},
                                  {"no-symmetrize", a.no_symmetrize ? "true" : "false"},
                                  {"sim3", a.sim3 ? "true" : "false"},
                                  {"chunk", std::to_string(a.chunk)},
                                  {"align-layers", std::to_string(a.align_layers)},
                                  {"threads", std::to_string(a.threads)},
                                  {"seed", std::to_string(a.seed)},
                                  {"out", a.out}});
  const auto depths = r.graph.depths();
  int registered = 0;
  for (const auto& p : r.poses.poses) registered += p.registered ? 1 : 0;
  const KeyValues report{{"images", std::to_string(r.recon.size())},
                         {"accumulated", std::to_string(r.recon.registered_count())},
                         {"registered", std::to_string(registered)},
                         {"registration", format_double(r.poses.registration_rate)},
                         {"root", std::to_string(r.graph.root)},
                         {"tree_depth", std::to_string(*std::max_element(depths.begin(), depths.end()))},
                         {"tree_cost", format_double(r.graph.total_cost())}};
  cli::write_kv(out / "report.txt", report);
  const auto& t = r.timings;
  cli::write_kv(out / "timing.txt", {{"image_encoding_ms", format_double(t.image_encoding)},
                                     {"latent_alignment_ms", format_double(t.latent_alignment)},
                                     {"graph_construction_ms", format_double(t.graph_construction)},
                                     {"pointmap_decoding_ms", format_double(t.pointmap_decoding)},
                                     {"global_accumulation_ms", format_double(t.global_accumulation)},
                                     {"pose_extraction_ms", format_double(t.pose_extraction)},
                                     {"total_ms", format_double(t.total)}});
  for (const auto& [k, v] : report) std::cout << k << '=' << v << '\n';
  return 0;
}

// Poses keyed by the GT ids; ids absent from the prediction are unregistered.
std::pair<PoseSet, PoseSet> matched_poses(const fs::path& pred_path, const fs::path& gt_path) {
  const auto gt = read_poses_file(gt_path);
  const auto pred = read_poses_file(pred_path);
  std::map<int, RigidTransform> gt_by_id, pred_by_id;
  for (const auto& p : gt) {
    if (!gt_by_id.emplace(p.id, p.pose).second) throw FormatError("duplicate id in GT poses");
  }
  for (const auto& p : pred) {
    if (!pred_by_id.emplace(p.id, p.pose).second) throw FormatError("duplicate id in predicted poses");
    if (!gt_by_id.count(p.id)) std::cerr << "warning: predicted id " << p.id << " has no GT pose\n";
  }
  PoseSet ps, gs;
  for (const auto& [id, pose] : gt_by_id) {
    gs.poses.emplace_back(pose);
    const auto it = pred_by_id.find(id);
    ps.poses.push_back(it == pred_by_id.end() ? std::nullopt : std::optional<RigidTransform>(it->second));
  }
  return {ps, gs};
}

int run_loss(const EvalArgs& a) {
  if (a.scene.empty() || a.recon.empty()) throw CLI::ValidationError("--loss", "needs --scene and --recon");
  const fs::path recon_dir(a.recon);
  LoadedScene loaded = load_scene(a.scene);
  const GroundTruthScene& scene = *loaded.scene;
  SceneGraph graph;
  {
    std::ifstream g(recon_dir / "graph.txt");
    if (!g) throw FormatError("cannot read graph.txt");
    graph = read_graph(g);
  }
  if (graph.n != scene.size()) throw FormatError("graph and scene disagree on the image count");

  EdgeDecodes decodes;
  for (const auto& e : graph.edges) decodes.emplace(std::make_pair(e.parent, e.child), loaded.backend->decode(e.parent, e.child));

  Reconstruction recon;
  recon.root = graph.root;
  for (int i = 0; i < scene.size(); ++i) {
    const fs::path p = recon_dir / "pointmaps" / (std::to_string(i) + ".lpmf");
    if (fs::exists(p)) {
      LpmfRecord rec = read_lpmf_file(p);
      if (!rec.confidence) throw FormatError(p.string() + " carries no confidence");
      recon.points.push_back(std::move(rec.points));
      recon.confidence.push_back(std::move(*rec.confidence));
      recon.registered.push_back(true);
    } else {
      const auto& v = scene.images[i].points;
      recon.points.emplace_back(v.height(), v.width());
      recon.confidence.emplace_back(v.height(), v.width());
      recon.registered.push_back(false);
    }
  }

  LossConfig cfg;
  cfg.alpha = a.alpha;
  cfg.lambda = a.lambda;
  if (a.regularizer == "log") {
    cfg.regularizer = Regularizer::kLog;
  } else if (a.regularizer != "linear") {
    throw CLI::ValidationError("--regularizer", "expected linear or log");
  }
  const LossReport r = evaluate_losses(scene, decodes, graph, recon, cfg);

  nlohmann::json j;
  j["alpha"] = cfg.alpha;
  j["lambda"] = r.lambda;
  j["regularizer"] = a.regularizer;
  j["pair_loss"] = r.pair_loss;
  j["global_loss"] = r.global_loss;
  j["total"] = r.total;
  j["align_rms"] = r.align_rms;
  j["per_edge"] = nlohmann::json::array();
  for (const auto& e : r.per_edge) j["per_edge"].push_back({{"parent", e.parent}, {"child", e.child}, {"loss", e.value}});
  j["per_image"] = nlohmann::json::array();
  for (const auto& im : r.per_image) {
    j["per_image"].push_back({{"image", im.image}, {"loss", im.value}, {"skipped", im.skipped}});
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_eval(const EvalArgs& a) {
  if (a.loss) return run_loss(a);
  if (a.pred.empty() || a.gt.empty()) throw CLI::ValidationError("eval", "--pred and --gt are required");
  if (a.pred_cloud.empty() != a.gt_cloud.empty()) {
    throw CLI::ValidationError("eval", "--pred-cloud and --gt-cloud go together");
  }
  const auto [pred, gt] = matched_poses(a.pred, a.gt);
  MetricReport report = evaluate_poses(pred, gt, a.thresholds);
  if (!a.pred_cloud.empty()) {
    PointCloud pc = read_ply(a.pred_cloud);
    const PointCloud gc = read_ply(a.gt_cloud);
    try {
      const RigidTransform align = ate(pred, gt).alignment;
      for (auto& p : pc.points) p = align(p);
    } catch (const DegenerateInput&) {
      std::cerr << "warning: no trajectory alignment; chamfer computed in the predicted frame\n";
    } catch (const InsufficientPoses&) {
      std::cerr << "warning: no trajectory alignment; chamfer computed in the predicted frame\n";
    }
    report.chamfer = chamfer(pc.points, gc.points);
  }
  if (a.format == "table" || a.format == "both") write_report_table(std::cout, report);
  if (a.format == "both") std::cout << '\n';
  if (a.format == "keys" || a.format == "both") write_report_keys(std::cout, report);
  return 0;
}

int run_probe(const ProbeArgs& a) {
  ProbeConfig c;
  c.ns = a.ns;
  c.tokens = a.tokens;
  c.dim = a.dim;
  c.heads = a.heads;
  c.levels = a.levels;
  c.reps = a.reps;
  c.seed = a.seed;
  const auto rows = complexity_probe(c);
  if (a.out.empty()) {
    write_probe_csv(std::cout, rows);
  } else {
    std::ofstream os(a.out);
    if (!os) throw Error("cannot write " + a.out);
    write_probe_csv(os, rows);
  }
  if (rows.size() >= 3) {
    std::vector<double> x, y;
    for (const auto& r : rows) {
      x.push_back(r.n);
      y.push_back(r.time_ms);
    }
    const QuadraticFit f = fit_quadratic(x, y);
    std::cerr << "fit: time_ms = " << f.a << " + " << f.b << " N + " << f.c << " N^2, R^2 = " << f.r2 << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feed-forward structure from motion on synthetic pointmaps"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic ground-truth scene");
  synth->add_option("--n", sa.n, "number of images")->check(CLI::Range(2, 100000));
  synth->add_option("--size", sa.size, "image size HxW");
  synth->add_option("--traj", sa.traj, "orbit, forward or random-wander")
      ->check(CLI::IsMember({"orbit", "forward", "random-wander"}));
  synth->add_option("--noise", sa.noise, "decoder noise as a fraction of the scene scale")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--seed", sa.seed, "random seed");
  synth->add_option("--orbit-arc", sa.orbit_arc, "angular span of the orbit in degrees")->check(CLI::Range(0.0, 360.0));
  synth->add_flag("--dump-edges", sa.dump_edges, "also write every pairwise decode under edges/");
  synth->add_option("--out", sa.out, "output directory")->required();

  ReconstructArgs ra;
  auto* recon = app.add_subcommand("reconstruct", "reconstruct poses and a point cloud");
  recon->add_option("--input", ra.input, "scene directory written by synth")->required();
  recon->add_option("--graph", ra.graph, "spt, mst or oracle")->check(CLI::IsMember({"spt", "mst", "oracle"}));
  recon->add_option("--conf-thr", ra.conf_thr, "confidence threshold for PnP")->check(CLI::Range(1.0, 1e9));
  recon->add_flag("--no-symmetrize", ra.no_symmetrize, "use forward decodes only");
  recon->add_flag("--sim3", ra.sim3, "register with similarity instead of rigid transforms");
  recon->add_option("--chunk", ra.chunk, "decodes submitted per batch")->check(CLI::PositiveNumber);
  recon->add_option("--align-layers", ra.align_layers, "latent alignment levels (0 skips the stage)")
      ->check(CLI::NonNegativeNumber);
  recon->add_option("--threads", ra.threads, "decoder threads (0 = hardware)")->check(CLI::NonNegativeNumber);
  recon->add_option("--seed", ra.seed, "RANSAC seed");
  recon->add_option("--out", ra.out, "output directory")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score predicted poses against ground truth");
  eval->add_option("--pred", ea.pred, "predicted poses file");
  eval->add_option("--gt", ea.gt, "ground-truth poses file");
  eval->add_option("--pred-cloud", ea.pred_cloud, "predicted PLY cloud");
  eval->add_option("--gt-cloud", ea.gt_cloud, "ground-truth PLY cloud");
  eval->add_option("--thresholds", ea.thresholds, "accuracy thresholds in degrees")->delimiter(',');
  eval->add_option("--format", ea.format, "table, keys or both")->check(CLI::IsMember({"table", "keys", "both"}));
  eval->add_flag("--loss", ea.loss, "report training losses as JSON instead of metrics");
  eval->add_option("--scene", ea.scene, "scene directory (with --loss)");
  eval->add_option("--recon", ea.recon, "reconstruct output directory (with --loss)");
  eval->add_option("--alpha", ea.alpha, "confidence regularizer weight")->check(CLI::PositiveNumber);
  eval->add_option("--lambda", ea.lambda, "global loss weight")->check(CLI::NonNegativeNumber);
  eval->add_option("--regularizer", ea.regularizer, "linear or log")->check(CLI::IsMember({"linear", "log"}));

  ProbeArgs pa;
  auto* probe = app.add_subcommand("probe", "time latent alignment against the image count");
  probe->add_option("--ns", pa.ns, "image counts")->delimiter(',')->check(CLI::PositiveNumber);
  probe->add_option("--tokens", pa.tokens)->check(CLI::PositiveNumber);
  probe->add_option("--dim", pa.dim)->check(CLI::PositiveNumber);
  probe->add_option("--heads", pa.heads)->check(CLI::PositiveNumber);
  probe->add_option("--levels", pa.levels)->check(CLI::PositiveNumber);
  probe->add_option("--reps", pa.reps)->check(CLI::PositiveNumber);
  probe->add_option("--seed", pa.seed);
  probe->add_option("--out", pa.out, "CSV output path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*recon) return run_reconstruct(ra);
    if (*eval) return run_eval(ea);
    if (*probe) return run_probe(pa);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}

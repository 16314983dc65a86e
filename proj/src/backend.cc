#include "pmsfm/backend.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <regex>

#include "pmsfm/errors.h"
#include "pmsfm/io.h"
#include "pmsfm/seed.h"

namespace pmsfm {

Trajectory parse_trajectory(const std::string& name) {
  if (name == "orbit") return Trajectory::kOrbit;
  if (name == "forward") return Trajectory::kForward;
  if (name == "random-wander") return Trajectory::kRandomWander;
  throw InvalidArgument("unknown trajectory '" + name + "' (orbit|forward|random-wander)");
}

std::string to_string(Trajectory t) {
  switch (t) {
    case Trajectory::kOrbit: return "orbit";
    case Trajectory::kForward: return "forward";
    case Trajectory::kRandomWander: return "random-wander";
  }
  return "orbit";
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Closed surface given by a radial function around the origin: an ellipsoid
// modulated by a sum of smooth directional waves.
class Surface {
 public:
  Surface(const Vec3& semi_axes, double amplitude, std::mt19937_64& rng) : axes_(semi_axes), amplitude_(amplitude) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (int k = 0; k < 12; ++k) {
      Wave w;
      w.dir = Vec3(normal(rng), normal(rng), normal(rng)).normalized();
      w.freq = 1.5 + 4.5 * uniform(rng);
      w.phase = 2.0 * std::numbers::pi * uniform(rng);
      w.weight = 0.3 + uniform(rng);
      weight_sum_ += w.weight;
      waves_.push_back(w);
    }
  }

  double radius(const Vec3& unit_dir) const {
    const double ellipsoid = 1.0 / unit_dir.cwiseQuotient(axes_).norm();
    double bump = 0.0;
    for (const auto& w : waves_) bump += w.weight * std::cos(w.freq * unit_dir.dot(w.dir) + w.phase);
    return ellipsoid * (1.0 + amplitude_ * bump / weight_sum_);
  }

  double min_radius() const { return axes_.minCoeff() * (1.0 - amplitude_); }
  double max_radius() const { return axes_.maxCoeff() * (1.0 + amplitude_); }

  // Signed distance-like residual along the radial direction; negative inside.
  double residual(const Vec3& p) const {
    const double r = p.norm();
    if (r == 0.0) return -min_radius();
    return r - radius(p / r);
  }

  // First crossing of the ray origin + t * dir with the surface. The origin
  // must lie inside.
  Vec3 cast(const Vec3& origin, const Vec3& dir) const {
    const double step = 0.02 * min_radius();
    double lo = std::max(0.0, 0.999 * (min_radius() - origin.norm()));
    const double t_max = origin.norm() + max_radius() + 1.0;
    double hi = lo;
    for (double res = residual(origin + hi * dir); res < 0.0; res = residual(origin + hi * dir)) {
      lo = hi;
      hi += std::max(step, 0.25 * -res);
      if (hi > t_max) throw DegenerateInput("ray escaped the synthetic surface");
    }
    // Illinois-modified false position.
    double f_lo = residual(origin + lo * dir);
    double f_hi = residual(origin + hi * dir);
    int side = 0;
    for (int it = 0; it < 100 && hi - lo > 1e-13 * hi && f_hi != 0.0; ++it) {
      const double mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
      const double f_mid = residual(origin + mid * dir);
      if (f_mid < 0.0) {
        lo = mid;
        f_lo = f_mid;
        if (side == -1) f_hi *= 0.5;
        side = -1;
      } else {
        hi = mid;
        f_hi = f_mid;
        if (side == 1) f_lo *= 0.5;
        side = 1;
      }
    }
    return origin + (std::abs(f_lo) < std::abs(f_hi) ? lo : hi) * dir;
  }

 private:
  struct Wave {
    Vec3 dir;
    double freq, phase, weight;
  };
  Vec3 axes_;
  double amplitude_;
  double weight_sum_ = 0.0;
  std::vector<Wave> waves_;
};

// Camera-to-world rotation whose optical axis is `forward`; image y points
// along world +y as far as possible (OpenCV-style, y down).
Mat3 look_rotation(const Vec3& forward) {
  const Vec3 z = forward.normalized();
  Vec3 x = Vec3::UnitY().cross(z);
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

std::vector<RigidTransform> make_trajectory(const SynthConfig& cfg, std::mt19937_64& rng, Vec3& semi_axes) {
  std::vector<RigidTransform> poses(cfg.n);
  switch (cfg.trajectory) {
    case Trajectory::kOrbit: {
      semi_axes = Vec3(4.0, 3.0, 4.0);
      for (int i = 0; i < cfg.n; ++i) {
        const double theta = cfg.orbit_arc_deg * kDeg * i / cfg.n;
        const Vec3 c = cfg.orbit_radius * Vec3(std::cos(theta), 0.0, std::sin(theta));
        const Vec3 forward = c.norm() > 1e-12 ? Vec3(-c) : Vec3::UnitZ();
        poses[i].rotation = look_rotation(forward);
        poses[i].translation = c;
      }
      break;
    }
    case Trajectory::kForward: {
      // Gently curving road: monotone progress along +z with a lateral sway,
      // so camera centers are never collinear.
      const double spacing = 0.15;
      const double half = 0.5 * spacing * (cfg.n - 1);
      semi_axes = Vec3(3.0, 2.0, half + 5.0);
      for (int i = 0; i < cfg.n; ++i) {
        const double z = -half + spacing * i;
        const double x = 0.4 * std::sin(z * 0.8);
        const double dx = 0.4 * 0.8 * std::cos(z * 0.8);
        poses[i].rotation = look_rotation(Vec3(dx, 0.05, 1.0));
        poses[i].translation = Vec3(x, 0.2, z);
      }
      break;
    }
    case Trajectory::kRandomWander: {
      semi_axes = Vec3(4.0, 3.0, 4.0);
      std::normal_distribution<double> normal;
      std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
      double yaw = uniform(rng);
      double pitch = 0.0;
      Vec3 c = Vec3::Zero();
      for (int i = 0; i < cfg.n; ++i) {
        yaw += 12.0 * kDeg * normal(rng);
        pitch = std::clamp(pitch + 4.0 * kDeg * normal(rng), -15.0 * kDeg, 15.0 * kDeg);
        const Vec3 forward(std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw));
        if (i > 0) c += 0.12 * forward + 0.05 * Vec3(normal(rng), 0.3 * normal(rng), normal(rng));
        if (c.norm() > 1.5) c *= 1.5 / c.norm();
        poses[i].rotation = look_rotation(forward);
        poses[i].translation = c;
      }
      break;
    }
  }
  return poses;
}

}  // namespace

double camera_spread(std::span<const RigidTransform> poses) {
  if (poses.empty()) return 0.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : poses) mean += p.translation;
  mean /= static_cast<double>(poses.size());
  double acc = 0.0;
  for (const auto& p : poses) acc += (p.translation - mean).squaredNorm();
  return std::sqrt(acc / static_cast<double>(poses.size()));
}

GroundTruthScene synth_scene(const SynthConfig& cfg) {
  if (cfg.n < 2) throw InvalidArgument("synth_scene: need at least 2 images");
  if (cfg.height < 16 || cfg.width < 16) throw InvalidArgument("synth_scene: image size must be at least 16x16");

  std::mt19937_64 rng(derive_seed(cfg.seed, {0x5ce9e}));
  Vec3 semi_axes;
  const std::vector<RigidTransform> poses = make_trajectory(cfg, rng, semi_axes);
  const Surface surface(semi_axes, 0.15, rng);

  GroundTruthScene scene;
  scene.seed = cfg.seed;
  const double focal = 0.5 * cfg.width / std::tan(0.5 * cfg.fov_deg * kDeg);
  const double mask_radius = std::sqrt(cfg.invalid_fraction * cfg.height * cfg.width / std::numbers::pi);

  for (int i = 0; i < cfg.n; ++i) {
    GroundTruthView view;
    view.pose = poses[i];
    view.intrinsics = {focal, focal, 0.5 * cfg.width, 0.5 * cfg.height};
    if (surface.residual(view.pose.translation) >= 0.0) throw DegenerateInput("camera outside the synthetic surface");
    view.points = Pointmap(cfg.height, cfg.width);

    std::mt19937_64 mask_rng(derive_seed(cfg.seed, {0x3a5c, static_cast<std::uint64_t>(i)}));
    std::uniform_real_distribution<double> uu(0.0, cfg.width - 1.0), vv(0.0, cfg.height - 1.0);
    const Vec2 blob(uu(mask_rng), vv(mask_rng));

    for (int v = 0; v < cfg.height; ++v) {
      for (int u = 0; u < cfg.width; ++u) {
        if (cfg.invalid_fraction > 0.0 && (Vec2(u, v) - blob).norm() < mask_radius) continue;
        const Vec3 dir = (view.pose.rotation * view.intrinsics.unproject(u, v)).normalized();
        view.points.set(view.points.index(u, v), surface.cast(view.pose.translation, dir));
      }
    }
    scene.images.push_back(std::move(view));
  }

  scene.scale = camera_spread(poses);
  if (scene.scale < 1e-9) {
    // Coincident cameras: fall back to the spread of the rendered geometry.
    Vec3 mean = Vec3::Zero();
    double count = 0.0;
    for (const auto& view : scene.images) {
      for (std::size_t p = 0; p < view.points.size(); ++p) {
        if (view.points.valid(p)) {
          mean += view.points[p];
          count += 1.0;
        }
      }
    }
    mean /= count;
    double acc = 0.0;
    for (const auto& view : scene.images) {
      for (std::size_t p = 0; p < view.points.size(); ++p) {
        if (view.points.valid(p)) acc += (view.points[p] - mean).squaredNorm();
      }
    }
    scene.scale = std::sqrt(acc / count);
  }
  return scene;
}

EdgeDecode oracle_decode(const GroundTruthScene& scene, int i, int j, const OracleNoise& noise) {
  if (i == j) throw InvalidArgument("oracle_decode: edge endpoints must differ");
  if (i < 0 || j < 0 || i >= scene.size() || j >= scene.size()) throw InvalidArgument("oracle_decode: index out of range");

  const RigidTransform to_cam = scene.images[i].pose.inverse();
  const double std_dev = noise.sigma * scene.scale;
  const double denom = 2.0 * std_dev * std_dev + 1e-300;
  std::mt19937_64 rng(derive_seed(noise.seed, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)}));
  std::normal_distribution<double> normal(0.0, 1.0);

  auto render = [&](const Pointmap& world, Pointmap& out, ConfidenceMap& conf) {
    out = Pointmap(world.height(), world.width());
    conf = ConfidenceMap(world.height(), world.width(), 1.0);
    for (std::size_t p = 0; p < world.size(); ++p) {
      if (!world.valid(p)) continue;
      Vec3 eps = Vec3::Zero();
      if (std_dev > 0.0) eps = std_dev * Vec3(normal(rng), normal(rng), normal(rng));
      out.set(p, to_cam(world[p]) + eps);
      conf[p] = 1.0 + noise.kappa * std::exp(-eps.squaredNorm() / denom);
    }
  };

  EdgeDecode d;
  render(scene.images[i].points, d.ref_points, d.ref_conf);
  render(scene.images[j].points, d.other_points, d.other_conf);
  return d;
}

OracleBackend::OracleBackend(std::shared_ptr<const GroundTruthScene> scene, OracleNoise noise)
    : scene_(std::move(scene)), noise_(noise) {}

std::pair<int, int> OracleBackend::shape(int i) const {
  const auto& p = scene_->images.at(i).points;
  return {p.height(), p.width()};
}

EdgeDecode OracleBackend::decode(int i, int j) const { return oracle_decode(*scene_, i, j, noise_); }

std::string edge_filename(int i, int j) {
  return "edge_" + std::to_string(i) + "_" + std::to_string(j) + ".lpmf";
}

FileBackend::FileBackend(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!std::filesystem::is_directory(dir_)) throw FormatError("not a directory: " + dir_.string());
  const std::regex pattern(R"(edge_(\d+)_(\d+)\.lpmf)");
  std::vector<std::pair<int, int>> shapes;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const int i = std::stoi(m[1]);
    const int j = std::stoi(m[2]);
    const auto [hi, hj] = read_edge_shapes(entry.path());
    const int needed = std::max(i, j) + 1;
    if (static_cast<int>(shapes.size()) < needed) shapes.resize(needed, {0, 0});
    for (const auto& [idx, shp] : {std::pair{i, hi}, std::pair{j, hj}}) {
      if (shapes[idx].first != 0 && shapes[idx] != shp) throw FormatError("inconsistent image shape for image " + std::to_string(idx));
      shapes[idx] = shp;
    }
  }
  if (shapes.size() < 2) throw FormatError("no edge files found in " + dir_.string());
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (shapes[k].first == 0) throw FormatError("image " + std::to_string(k) + " does not appear in any edge file");
  }
  shapes_ = std::move(shapes);
}

EdgeDecode FileBackend::decode(int i, int j) const {
  const auto path = dir_ / edge_filename(i, j);
  if (!std::filesystem::exists(path)) throw MissingEdge("missing decode for edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  return read_edge_file(path);
}

std::unique_ptr<DecoderBackend> load_pointmaps(const std::filesystem::path& dir) {
  return std::make_unique<FileBackend>(dir);
}

}  // namespace pmsfm
